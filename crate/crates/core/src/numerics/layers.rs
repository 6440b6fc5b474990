//! Parameterized building blocks recorded on a [`Tape`].
//!
//! Each layer only stores parameter paths and shapes; values live in a
//! [`ParamStore`], so the same layer description serves initialization,
//! forward passes and checkpoint loading.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x·W (+ b)` with `W` of shape `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: bias.then(|| format!("{prefix}.b")),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.bias.as_deref()
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(&self.weight, self.in_dim, self.out_dim, self.in_dim, rng);
        if let Some(b) = &self.bias {
            store.init_uniform(b, 1, self.out_dim, self.in_dim, rng);
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.in_dim {
            return Err(Error::shape(
                "linear",
                format!("`{}` expects {} inputs, got {cols}", self.weight, self.in_dim),
            ));
        }
        let w = tape.param(store, &self.weight)?;
        let y = tape.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Affine layers with ReLU between them; the last layer stays affine.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first: `[in, h1, …, out]`.
    pub fn new(prefix: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    wz: Linear,
    uz: Linear,
    wr: Linear,
    ur: Linear,
    wh: Linear,
    uh: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let lin = |name: &str, i, bias| Linear::new(&format!("{prefix}.{name}"), i, hidden_dim, bias);
        Self {
            wz: lin("wz", input_dim, true),
            uz: lin("uz", hidden_dim, false),
            wr: lin("wr", input_dim, true),
            ur: lin("ur", hidden_dim, false),
            wh: lin("wh", input_dim, true),
            uh: lin("uh", hidden_dim, false),
            input_dim,
            hidden_dim,
        }
    }

    fn parts(&self) -> [&Linear; 6] {
        [&self.wz, &self.uz, &self.wr, &self.ur, &self.wh, &self.uh]
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        // fan-in of each gate is the hidden width, as in the usual GRU init
        for l in self.parts() {
            store.init_uniform(l.weight_name(), l.in_dim, l.out_dim, self.hidden_dim, rng);
            if let Some(b) = l.bias_name() {
                store.init_uniform(b, 1, l.out_dim, self.hidden_dim, rng);
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h_prev: Var, x: Var) -> Result<Var> {
        let (nh, wh) = tape.shape(h_prev);
        let (nx, _) = tape.shape(x);
        if nh != nx || wh != self.hidden_dim {
            return Err(Error::shape(
                "gru_cell",
                format!(
                    "hidden {nh}x{wh} (expected width {}) with input of {nx} rows",
                    self.hidden_dim
                ),
            ));
        }
        let gate = |tape: &mut Tape, w: &Linear, u: &Linear, h: Var| -> Result<Var> {
            let a = w.forward(tape, store, x)?;
            let b = u.forward(tape, store, h)?;
            tape.add(a, b)
        };
        let z_pre = gate(tape, &self.wz, &self.uz, h_prev)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, &self.wr, &self.ur, h_prev)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev)?;
        let cand_pre = gate(tape, &self.wh, &self.uh, rh)?;
        let cand = tape.tanh(cand_pre);

        // (1 − z) ⊙ h + z ⊙ h̃  =  h + z ⊙ (h̃ − h)
        let keep = tape.affine(z, -1.0, 1.0);
        let old = tape.mul(keep, h_prev)?;
        let new = tape.mul(z, cand)?;
        tape.add(old, new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use crate::numerics::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            let (r, c) = store.get(&n).unwrap().shape();
            store.insert(n, Matrix::zeros(r, c));
        }
    }

    #[test]
    fn gru_with_zero_weights_halves_hidden() {
        let gru = GruCell::new("g", 3, 2);
        let mut store = ParamStore::new();
        gru.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        zero_all(&mut store);
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap());
        let x = t.constant(Matrix::filled(2, 3, 0.7));
        let out = gru.forward(&mut t, &store, h, x).unwrap();
        assert_eq!(t.value(out).data(), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn gru_empty_batch() {
        let gru = GruCell::new("g", 3, 2);
        let mut store = ParamStore::new();
        gru.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let mut t = Tape::new();
        let h = t.constant(Matrix::zeros(0, 2));
        let x = t.constant(Matrix::zeros(0, 3));
        let out = gru.forward(&mut t, &store, h, x).unwrap();
        assert_eq!(t.shape(out), (0, 2));
    }

    #[test]
    fn gru_rejects_bad_shapes() {
        let gru = GruCell::new("g", 3, 2);
        let mut store = ParamStore::new();
        gru.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let mut t = Tape::new();
        let h = t.constant(Matrix::zeros(2, 2));
        let x = t.constant(Matrix::zeros(3, 3));
        assert!(gru.forward(&mut t, &store, h, x).is_err());
    }

    #[test]
    fn gru_gradcheck() {
        let gru = GruCell::new("g", 3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        gru.init(&mut store, &mut rng);
        store.init_uniform("h0", 5, 4, 1, &mut rng);
        store.init_uniform("x", 5, 3, 1, &mut rng);
        let report = grad_check(&store, 1e-5, |t, s| {
            let h = t.param(s, "h0")?;
            let x = t.param(s, "x")?;
            let out = gru.forward(t, s, h, x)?;
            let sq = t.square(out);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn mlp_identity_and_bias() {
        let mlp = Mlp::new("m", &[3, 3]);
        let mut store = ParamStore::new();
        store.insert("m.0.w", Matrix::identity(3));
        store.insert("m.0.b", Matrix::zeros(1, 3));
        let mut t = Tape::new();
        let xm = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let x = t.constant(xm.clone());
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), &xm);

        let mlp = Mlp::new("n", &[3, 4, 2]);
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        store.insert("n.0.w", Matrix::zeros(3, 4));
        store.insert("n.1.w", Matrix::zeros(4, 2));
        let bias = store.get("n.1.b").unwrap().clone();
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y).data(), bias.data());
    }

    #[test]
    fn mlp_gradcheck() {
        let mlp = Mlp::new("m", &[4, 6, 3]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        mlp.init(&mut store, &mut rng);
        store.init_uniform("x", 7, 4, 1, &mut rng);
        let report = grad_check(&store, 1e-5, |t, s| {
            let x = t.param(s, "x")?;
            let y = mlp.forward(t, s, x)?;
            let sq = t.square(y);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
