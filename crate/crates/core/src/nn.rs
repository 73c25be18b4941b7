//! Parameter storage and the small set of layers the model is built from.

use rand::Rng;

use crate::tape::{Gradients, Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in), the usual default for dense layers.
pub(crate) fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Dense layer `y = x·Wᵀ (+ b)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, output, input, input));
        let bias = bias.then(|| store.add(format!("{name}.bias"), init_uniform(rng, 1, output, input)));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul_t(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Gated recurrent unit cell.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    input_reset: Linear,
    input_update: Linear,
    input_new: Linear,
    hidden_reset: Linear,
    hidden_update: Linear,
    hidden_new: Linear,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Self {
        let mut lin = |part: &str, i: usize| Linear::new(store, rng, &format!("{name}.{part}"), i, hidden, true);
        GruCell {
            input_reset: lin("ir", input),
            input_update: lin("iz", input),
            input_new: lin("in", input),
            hidden_reset: lin("hr", hidden),
            hidden_update: lin("hz", hidden),
            hidden_new: lin("hn", hidden),
        }
    }

    /// One step over a batch of rows: `x [b×input]`, `h [b×hidden]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let xr = self.input_reset.forward(tape, x);
        let hr = self.hidden_reset.forward(tape, h);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);

        let xz = self.input_update.forward(tape, x);
        let hz = self.hidden_update.forward(tape, h);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);

        let xn = self.input_new.forward(tape, x);
        let hn = self.hidden_new.forward(tape, h);
        let hn = tape.mul(r, hn);
        let n = tape.add(xn, hn);
        let n = tape.tanh(n);

        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n);
        let gated = tape.mul(z, diff);
        tape.add(n, gated)
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| {
                    let v = store.value(id);
                    Matrix::zeros(v.rows, v.cols)
                })
                .collect::<Vec<_>>()
        };
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub(crate) fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first, &self.second)
    }

    pub(crate) fn from_parts(learning_rate: f64, step: u64, first: Vec<Matrix>, second: Vec<Matrix>) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            first,
            second,
        }
    }

    /// Parameters without a gradient this step still decay their moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = store.value_mut(id);
            for k in 0..p.data.len() {
                let gk = g.map_or(0.0, |g| g.data[k]);
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_zero_update_gate_passes_candidate() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = GruCell::new(&mut store, &mut rng, "g", 2, 3);
        // Saturate the update gate towards 1 so the state is kept.
        let b = gru.hidden_update.bias.unwrap();
        store.value_mut(b).data.iter_mut().for_each(|x| *x = 60.0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_vec(1, 2, vec![0.3, -0.2]));
        let h = tape.constant(Matrix::from_vec(1, 3, vec![0.1, 0.2, 0.3]));
        let out = gru.forward(&mut tape, x, h);
        for (a, b) in tape.value(out).data.iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::from_vec(1, 2, vec![3.0, -2.0]));
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..2000 {
            let grads = {
                let mut tape = Tape::new(&store);
                let x = tape.param(id);
                let sq = tape.square(x);
                let s = tape.sum(sq);
                tape.backward(s)
            };
            adam.step(&mut store, &grads);
        }
        assert!(store.value(id).data.iter().all(|v| v.abs() < 1e-3));
    }
}
