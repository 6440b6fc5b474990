//! Spatial-consistency non-local baseline.
//!
//! Each iteration computes `F ← F + MLP_l(softmax_j(⟨Q_i, K_j⟩/√d · β_ij) · V)`
//! with per-iteration projections `Q = F·W_q`, `K = F·W_k`, `V = F·W_v`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{input_matrix, InputMode};
use crate::error::{Error, Result};
use crate::geometry::{CompatibilityMatrix, CorrespondenceSet};
use crate::numerics::{Linear, Matrix, Mlp, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct ScNonlocal {
    pub iterations: usize,
    pub feature_dim: usize,
    pub input_mode: InputMode,
    init: Linear,
    steps: Vec<ScStep>,
}

#[derive(Debug, Clone)]
struct ScStep {
    q: Linear,
    k: Linear,
    v: Linear,
    mlp: Mlp,
}

impl ScNonlocal {
    pub fn new(iterations: usize, feature_dim: usize, input_mode: InputMode) -> Self {
        let d = feature_dim;
        let steps = (0..iterations)
            .map(|l| ScStep {
                q: Linear::new(&format!("sc.{l}.q"), d, d, false),
                k: Linear::new(&format!("sc.{l}.k"), d, d, false),
                v: Linear::new(&format!("sc.{l}.v"), d, d, false),
                mlp: Mlp::new(&format!("sc.{l}.mlp"), &[d, d, d]),
            })
            .collect();
        Self {
            iterations,
            feature_dim,
            input_mode,
            init: Linear::new("sc.init", input_mode.input_dim(), d, false),
            steps,
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.init.init(&mut store, &mut rng);
        for s in &self.steps {
            s.q.init(&mut store, &mut rng);
            s.k.init(&mut store, &mut rng);
            s.v.init(&mut store, &mut rng);
            s.mlp.init(&mut store, &mut rng);
        }
        store
    }

    /// Records the forward pass; returns `F⁰ … Fᴸ`.
    pub fn trace(&self, tape: &mut Tape, store: &ParamStore, set: &CorrespondenceSet, beta: &CompatibilityMatrix) -> Result<Vec<Var>> {
        let n = set.len();
        if beta.size() != n {
            return Err(Error::shape(
                "sc_nonlocal_forward",
                format!("compatibility is {0}x{0} for {n} correspondences", beta.size()),
            ));
        }
        let x = tape.constant(input_matrix(set, self.input_mode)?);
        let gate = tape.constant(Matrix::from_vec(n, n, beta.values().to_vec())?);
        let scale = 1.0 / (self.feature_dim as f64).sqrt();
        let mut f = self.init.forward(tape, store, x)?;
        let mut out = vec![f];
        for s in &self.steps {
            let q = s.q.forward(tape, store, f)?;
            let k = s.k.forward(tape, store, f)?;
            let v = s.v.forward(tape, store, f)?;
            let att = tape.gated_attention(q, k, gate, scale)?;
            let agg = tape.matmul(att, v)?;
            let upd = s.mlp.forward(tape, store, agg)?;
            f = tape.add(f, upd)?;
            out.push(f);
        }
        Ok(out)
    }
}

/// Feature matrices `F⁰ … Fᴸ` of the baseline network.
pub fn sc_nonlocal_forward(
    set: &CorrespondenceSet,
    beta: &CompatibilityMatrix,
    net: &ScNonlocal,
    store: &ParamStore,
) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let vars = net.trace(&mut tape, store, set, beta)?;
    tape.validate()?;
    Ok(vars.into_iter().map(|v| tape.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geometric_compatibility, Correspondence, Point3};

    fn set(n: usize) -> CorrespondenceSet {
        let items = (0..n)
            .map(|i| {
                let s = Point3::new(i as f64 * 0.3, (i * i) as f64 * 0.1 - 0.2, 0.5 - i as f64 * 0.25);
                let t = s + Point3::new(0.1, if i == 2 { 0.9 } else { -0.05 }, 0.2);
                Correspondence::new(s, t)
            })
            .collect();
        CorrespondenceSet::new(items, None, 0.1).unwrap()
    }

    fn mat(store: &ParamStore, name: &str) -> Vec<Vec<f64>> {
        let m = store.get(name).unwrap();
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
    }

    // x · W for plain nested vectors
    fn mm(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| row.iter().zip(w).map(|(a, wr)| a * wr[j]).sum())
                    .collect()
            })
            .collect()
    }

    fn add_bias(x: &mut [Vec<f64>], b: &[Vec<f64>]) {
        for row in x.iter_mut() {
            for (v, bb) in row.iter_mut().zip(&b[0]) {
                *v += bb;
            }
        }
    }

    #[test]
    fn matches_step_by_step_oracle() {
        let n = 3;
        let s = set(n);
        let beta = geometric_compatibility(&s);
        let net = ScNonlocal::new(2, 5, InputMode::Coordinates);
        let store = net.init_params(8);
        let got = sc_nonlocal_forward(&s, &beta, &net, &store).unwrap();

        let x: Vec<Vec<f64>> = s
            .items
            .iter()
            .map(|c| c.source.iter().chain(c.target.iter()).copied().collect())
            .collect();
        let mut f = mm(&x, &mat(&store, "sc.init.w"));
        for l in 0..2 {
            let q = mm(&f, &mat(&store, &format!("sc.{l}.q.w")));
            let k = mm(&f, &mat(&store, &format!("sc.{l}.k.w")));
            let v = mm(&f, &mat(&store, &format!("sc.{l}.v.w")));
            let mut agg = vec![vec![0.0; 5]; n];
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum();
                        dot / 5f64.sqrt() * beta.get(i, j)
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    for c in 0..5 {
                        agg[i][c] += e[j] / z * v[j][c];
                    }
                }
            }
            let mut h = mm(&agg, &mat(&store, &format!("sc.{l}.mlp.0.w")));
            add_bias(&mut h, &mat(&store, &format!("sc.{l}.mlp.0.b")));
            for row in h.iter_mut() {
                for v in row.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            let mut u = mm(&h, &mat(&store, &format!("sc.{l}.mlp.1.w")));
            add_bias(&mut u, &mat(&store, &format!("sc.{l}.mlp.1.b")));
            for i in 0..n {
                for c in 0..5 {
                    f[i][c] += u[i][c];
                }
            }
            for i in 0..n {
                for c in 0..5 {
                    let a = got[l + 1].get(i, c);
                    assert!((a - f[i][c]).abs() < 1e-12, "iter {l} ({i},{c}): {a} vs {}", f[i][c]);
                }
            }
        }
    }

    #[test]
    fn zero_update_branch_keeps_features() {
        let s = set(4);
        let beta = CompatibilityMatrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.0 });
        let net = ScNonlocal::new(3, 6, InputMode::Coordinates);
        let mut store = net.init_params(1);
        for l in 0..3 {
            store.insert(format!("sc.{l}.v.w"), Matrix::zeros(6, 6));
            store.insert(format!("sc.{l}.mlp.0.b"), Matrix::zeros(1, 6));
            store.insert(format!("sc.{l}.mlp.1.b"), Matrix::zeros(1, 6));
        }
        let f = sc_nonlocal_forward(&s, &beta, &net, &store).unwrap();
        assert_eq!(f.len(), 4);
        for m in &f[1..] {
            assert_eq!(m, &f[0]);
        }
    }

    #[test]
    fn single_correspondence_attends_to_itself() {
        let s = set(1);
        let beta = geometric_compatibility(&s);
        let net = ScNonlocal::new(1, 4, InputMode::Coordinates);
        let store = net.init_params(3);
        let f = sc_nonlocal_forward(&s, &beta, &net, &store).unwrap();
        // with one row, aggregation returns V itself
        let v = f[0].matmul(store.get("sc.0.v.w").unwrap()).unwrap();
        let h = v.matmul(store.get("sc.0.mlp.0.w").unwrap()).unwrap();
        let b0 = store.get("sc.0.mlp.0.b").unwrap();
        let h = h.zip_map(b0, |a, b| (a + b).max(0.0));
        let u = h.matmul(store.get("sc.0.mlp.1.w").unwrap()).unwrap();
        let u = u.zip_map(store.get("sc.0.mlp.1.b").unwrap(), |a, b| a + b);
        let expect = f[0].zip_map(&u, |a, b| a + b);
        for c in 0..4 {
            assert!((f[1].get(0, c) - expect.get(0, c)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_mismatched_compatibility() {
        let s = set(3);
        let beta = CompatibilityMatrix::from_fn(2, |_, _| 1.0);
        let net = ScNonlocal::new(1, 4, InputMode::Coordinates);
        let store = net.init_params(0);
        assert!(sc_nonlocal_forward(&s, &beta, &net, &store).is_err());
    }
}
