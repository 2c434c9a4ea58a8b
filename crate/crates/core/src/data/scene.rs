use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Scenes live on a `GRID × GRID` lattice of cells.
pub const GRID: usize = 4;

const BACKGROUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Cross,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Cross, Shape::Triangle];

    pub fn token(self) -> usize {
        6 + self as usize
    }

    pub fn from_token(id: usize) -> Option<Self> {
        Self::ALL.get(id.checked_sub(6)?).copied()
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn token(self) -> usize {
        9 + self as usize
    }

    pub fn from_token(id: usize) -> Option<Self> {
        Self::ALL.get(id.checked_sub(9)?).copied()
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

const ROW_TOKEN: usize = 13;
const COL_TOKEN: usize = 17;
const AT_TOKEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
}

impl SyntheticScene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            shape: Shape::ALL[rng.gen_range(0..Shape::ALL.len())],
            color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
            row: rng.gen_range(0..GRID),
            col: rng.gen_range(0..GRID),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.row < GRID && self.col < GRID
    }
}

/// Every scene, in shape-color-row-col order.
pub fn all_scenes() -> Vec<SyntheticScene> {
    let mut out = Vec::with_capacity(Shape::ALL.len() * Color::ALL.len() * GRID * GRID);
    for shape in Shape::ALL {
        for color in Color::ALL {
            for row in 0..GRID {
                for col in 0..GRID {
                    out.push(SyntheticScene { shape, color, row, col });
                }
            }
        }
    }
    out
}

/// `[shape, color, at, r<row>, c<col>]`
pub fn caption(scene: &SyntheticScene) -> Vec<usize> {
    vec![
        scene.shape.token(),
        scene.color.token(),
        AT_TOKEN,
        ROW_TOKEN + scene.row,
        COL_TOKEN + scene.col,
    ]
}

pub fn parse_caption(ids: &[usize]) -> Option<SyntheticScene> {
    let [s, c, at, r, k] = ids else {
        return None;
    };
    if *at != AT_TOKEN {
        return None;
    }
    let row = r.checked_sub(ROW_TOKEN).filter(|&v| v < GRID)?;
    let col = k.checked_sub(COL_TOKEN).filter(|&v| v < GRID)?;
    Some(SyntheticScene {
        shape: Shape::from_token(*s)?,
        color: Color::from_token(*c)?,
        row,
        col,
    })
}

/// 4×4 foreground mask of a glyph, row-major.
pub fn glyph_mask(shape: Shape) -> [[bool; 4]; 4] {
    const X: bool = true;
    const O: bool = false;
    match shape {
        Shape::Square => [[X; 4]; 4],
        Shape::Cross => [[O, X, X, O], [X, X, X, X], [X, X, X, X], [O, X, X, O]],
        Shape::Triangle => [[X, O, O, O], [X, X, O, O], [X, X, X, O], [X, X, X, X]],
    }
}

/// Renders a scene into an `side × side × channels` row-major image in
/// `[0, 1]`. The glyph is drawn in exact color over a gray background; only
/// background pixels receive uniform noise in `[-noise, noise]`.
///
/// `side` must be a multiple of [`GRID`]; `channels` is 1 (gray) or 3 (RGB).
pub fn render(scene: &SyntheticScene, seed: u64, side: usize, channels: usize, noise: f64) -> Vec<f64> {
    let cell = side / GRID;
    let mask = glyph_mask(scene.shape);
    let rgb = scene.color.rgb();
    let fg: Vec<f64> = if channels == 3 {
        rgb.to_vec()
    } else {
        vec![rgb.iter().sum::<f64>() / 3.0; channels]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut img = vec![0.0; side * side * channels];
    for y in 0..side {
        for x in 0..side {
            let in_cell = y / cell == scene.row && x / cell == scene.col;
            let on = in_cell && mask[(y % cell) * GRID / cell][(x % cell) * GRID / cell];
            let px = &mut img[(y * side + x) * channels..(y * side + x + 1) * channels];
            for (c, v) in px.iter_mut().enumerate() {
                *v = if on {
                    fg[c]
                } else if noise > 0.0 {
                    (BACKGROUND + rng.gen_range(-noise..=noise)).clamp(0.0, 1.0)
                } else {
                    BACKGROUND
                };
            }
        }
    }
    img
}
