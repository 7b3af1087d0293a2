//! Adaptor networks: one small feed-forward net per adaptable block, mapping
//! the standardized structural features of a graph to that block's FiLM
//! vector `φ = (γ_raw, β)` of length `2d`.
//!
//! Output heads start at zero and `γ = 1 + γ_raw`, so a freshly built bank
//! produces the identity adaptation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptorNet {
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    /// Row count `d` of the weight this net adapts; the head emits `2d` values.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptorBank {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub nets: Vec<AdaptorNet>,
}

impl AdaptorBank {
    /// One net per entry of `widths`. Hidden layers get Glorot weights and
    /// zero biases, output heads are all zeros.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        input_dim: usize,
        hidden_dim: usize,
        widths: &[usize],
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("adaptor input and hidden widths must be positive"));
        }
        let nets = widths
            .iter()
            .map(|&width| AdaptorNet {
                hidden_w: store.push(DenseMatrix::glorot(input_dim, hidden_dim, rng)),
                hidden_b: store.push(DenseMatrix::zeros(1, hidden_dim)),
                out_w: store.push(DenseMatrix::zeros(hidden_dim, 2 * width)),
                out_b: store.push(DenseMatrix::zeros(1, 2 * width)),
                width,
            })
            .collect();
        Ok(Self {
            input_dim,
            hidden_dim,
            nets,
        })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    /// `φ_j = ReLU(s·W₁ + b₁)·W₂ + b₂`, a `1×2d_j` row.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, block: usize, s: Var) -> Result<Var> {
        let net = self.nets.get(block).ok_or_else(|| {
            Error::invalid(format!("adaptor block {block} out of range (bank has {})", self.nets.len()))
        })?;
        let sv = tape.value(s);
        if sv.shape() != (1, self.input_dim) {
            return Err(Error::shape(
                "adaptor_forward",
                format!("structure input {:?}, expected (1, {})", sv.shape(), self.input_dim),
            ));
        }
        let h = tape.matmul(s, bound.var(net.hidden_w))?;
        let h = tape.add_row(h, bound.var(net.hidden_b))?;
        let h = tape.relu(h)?;
        let out = tape.matmul(h, bound.var(net.out_w))?;
        tape.add_row(out, bound.var(net.out_b))
    }

    /// `Φ = (φ_1, …, φ_K)` from one shared input.
    pub fn forward_all(&self, tape: &mut Tape, bound: &Bound, s: Var) -> Result<Vec<Var>> {
        (0..self.nets.len())
            .map(|j| self.forward(tape, bound, j, s))
            .collect()
    }

    /// Evaluates every net on `s` and returns the split FiLM vectors.
    pub fn film_params(&self, store: &ParamStore, s: &[f64]) -> Result<Vec<FilmParams>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let sv = tape.constant(DenseMatrix::row_vector(s));
        self.forward_all(&mut tape, &bound, sv)?
            .into_iter()
            .map(|phi| split_film(tape.value(phi).as_slice()))
            .collect()
    }
}

/// Value-level FiLM vectors for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FilmParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Records γ and β as constant `d×1` columns.
    pub fn to_tape(&self, tape: &mut Tape) -> FilmVars {
        FilmVars {
            gamma: tape.constant(DenseMatrix::col_vector(&self.gamma)),
            beta: tape.constant(DenseMatrix::col_vector(&self.beta)),
        }
    }
}

/// FiLM vectors as `d×1` tape columns.
#[derive(Debug, Clone, Copy)]
pub struct FilmVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Splits `φ ∈ R^{2d}` into `γ = 1 + φ[..d]` and `β = φ[d..]`.
pub fn split_film(phi: &[f64]) -> Result<FilmParams> {
    if phi.len() % 2 != 0 {
        return Err(Error::invalid(format!("FiLM vector of odd length {}", phi.len())));
    }
    let d = phi.len() / 2;
    Ok(FilmParams {
        gamma: phi[..d].iter().map(|g| 1.0 + g).collect(),
        beta: phi[d..].to_vec(),
    })
}

/// Tape version of [`split_film`] for a `1×2d` row.
pub fn split_film_var(tape: &mut Tape, phi: Var) -> Result<FilmVars> {
    let (rows, cols) = tape.value(phi).shape();
    if rows != 1 || cols % 2 != 0 {
        return Err(Error::shape("split_film", format!("φ is {rows}x{cols}")));
    }
    let d = cols / 2;
    let gamma_raw = tape.slice_cols(phi, 0, d)?;
    let gamma = tape.add_scalar(gamma_raw, 1.0)?;
    let gamma = tape.transpose(gamma)?;
    let beta = tape.slice_cols(phi, d, d)?;
    let beta = tape.transpose(beta)?;
    Ok(FilmVars { gamma, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(widths: &[usize]) -> (ParamStore, AdaptorBank) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bank = AdaptorBank::new(&mut store, &mut rng, 3, 16, widths).unwrap();
        (store, bank)
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_film(&[0.0; 4]).unwrap(), FilmParams::identity(2));
        let fp = split_film(&[1.0, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fp.gamma, vec![2.0, 0.0]);
        assert_eq!(fp.beta, vec![2.0, 3.0]);
        assert!(split_film(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn split_var_matches_values() {
        let mut t = Tape::new();
        let phi = t.constant(DenseMatrix::row_vector(&[1.0, -1.0, 2.0, 3.0]));
        let fv = split_film_var(&mut t, phi).unwrap();
        assert_eq!(t.value(fv.gamma), &DenseMatrix::col_vector(&[2.0, 0.0]));
        assert_eq!(t.value(fv.beta), &DenseMatrix::col_vector(&[2.0, 3.0]));
    }

    #[test]
    fn zero_heads_give_identity() {
        let (store, bank) = bank(&[2, 5]);
        let fps = bank.film_params(&store, &[0.3, -1.2, 2.0]).unwrap();
        assert_eq!(fps, vec![FilmParams::identity(2), FilmParams::identity(5)]);
    }

    #[test]
    fn zero_input_depends_on_output_bias_only() {
        let (mut store, bank) = bank(&[1]);
        let net = &bank.nets[0];
        *store.get_mut(net.out_w) = DenseMatrix::filled(16, 2, 0.7);
        *store.get_mut(net.out_b) = DenseMatrix::row_vector(&[0.25, -0.5]);
        let fp = bank.film_params(&store, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(fp[0].gamma, vec![1.25]);
        assert_eq!(fp[0].beta, vec![-0.5]);
    }

    #[test]
    fn single_hidden_unit_by_hand() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bank = AdaptorBank::new(&mut store, &mut rng, 3, 1, &[1]).unwrap();
        let net = &bank.nets[0];
        *store.get_mut(net.hidden_w) = DenseMatrix::filled(3, 1, 1.0);
        *store.get_mut(net.out_w) = DenseMatrix::row_vector(&[0.5, -2.0]);
        *store.get_mut(net.out_b) = DenseMatrix::row_vector(&[0.1, 0.2]);
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        let s = t.constant(DenseMatrix::row_vector(&[1.0, 1.0, 1.0]));
        let phi = bank.forward(&mut t, &b, 0, s).unwrap();
        // hidden = 3, φ = 3·(0.5, −2) + (0.1, 0.2)
        let expected = [3.0 * 0.5 + 0.1, 3.0 * -2.0 + 0.2];
        for (got, want) in t.value(phi).as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn block_out_of_range() {
        let (store, bank) = bank(&[2]);
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        let s = t.constant(DenseMatrix::zeros(1, 3));
        assert!(bank.forward(&mut t, &b, 1, s).is_err());
        assert_eq!(bank.forward_all(&mut t, &b, s).unwrap().len(), 1);
    }

    #[test]
    fn identical_nets_identical_outputs() {
        let (mut store, bank) = bank(&[3, 3]);
        let (a, b) = (&bank.nets[0], &bank.nets[1]);
        for (src, dst) in [(a.hidden_w, b.hidden_w), (a.hidden_b, b.hidden_b)] {
            let m = store.get(src).clone();
            *store.get_mut(dst) = m;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = DenseMatrix::glorot(16, 6, &mut rng);
        *store.get_mut(a.out_w) = head.clone();
        *store.get_mut(b.out_w) = head;
        let fps = bank.film_params(&store, &[0.5, 1.0, -0.3]).unwrap();
        assert_eq!(fps[0], fps[1]);
        assert_ne!(fps[0], FilmParams::identity(3));
    }
}
