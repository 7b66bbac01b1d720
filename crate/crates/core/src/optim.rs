/// Per-coordinate AdaGrad: `θ_i -= lr · g_i / (sqrt(Σ g_i²) + ε)`.
#[derive(Debug, Clone)]
pub struct Adagrad {
    learning_rate: f64,
    accumulator: Vec<f64>,
}

const EPS: f64 = 1e-8;

impl Adagrad {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adagrad {
            learning_rate,
            accumulator: vec![0.0; n_params],
        }
    }

    #[inline]
    pub fn update(&mut self, params: &mut [f64], i: usize, g: f64) {
        if g == 0.0 {
            return;
        }
        let ss = &mut self.accumulator[i];
        *ss += g * g;
        params[i] -= self.learning_rate * g / (ss.sqrt() + EPS);
    }
}
