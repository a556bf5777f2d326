use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lattice value noise over the head's UV square, periodic in `u`.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    cols: usize,
    rows: usize,
    lattice: Vec<f64>,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl ValueNoise {
    pub fn new(seed: u64, cols: usize, rows: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lattice = (0..cols * (rows + 1))
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        Self {
            cols,
            rows,
            lattice,
        }
    }

    /// Value in `[-1, 1]`.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let x = u.rem_euclid(1.0) * self.cols as f64;
        let y = v.clamp(0.0, 1.0) * self.rows as f64;
        let i0 = (x.floor() as usize) % self.cols;
        let i1 = (i0 + 1) % self.cols;
        let j0 = (y.floor() as usize).min(self.rows - 1);
        let fx = smoothstep(x - x.floor());
        let fy = smoothstep(y - j0 as f64);
        let at = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = at(i0, j0) + fx * (at(i1, j0) - at(i0, j0));
        let bot = at(i0, j0 + 1) + fx * (at(i1, j0 + 1) - at(i0, j0 + 1));
        top + fy * (bot - top)
    }
}

/// Two octaves of value noise, still in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct FractalNoise {
    coarse: ValueNoise,
    fine: ValueNoise,
}

impl FractalNoise {
    pub fn new(seed: u64, cols: usize, rows: usize) -> Self {
        Self {
            coarse: ValueNoise::new(seed, cols, rows),
            fine: ValueNoise::new(seed ^ 0x9e37_79b9_7f4a_7c15, cols * 2, rows * 2),
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (self.coarse.eval(u, v) + 0.5 * self.fine.eval(u, v)) / 1.5
    }
}
