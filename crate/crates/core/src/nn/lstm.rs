//! LSTM cell: parameters and one batched recurrence step.

use super::params::{uniform_matrix, ParamId, ParamSet};
use super::tape::{NodeId, Tape};
use super::NnError;
use ndarray::Array2;
use rand::Rng;

/// Parameters of one LSTM cell. Gate blocks are stacked row-wise in the order
/// input, forget, cell-candidate, output: `w_ih` is `(4H, input_dim)`, `w_hh`
/// is `(4H, H)` and the bias is a `(1, 4H)` row.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    /// Registers freshly initialized cell parameters: weights uniform in
    /// `(-k, k)` with `k = 1/sqrt(hidden_dim)`, biases zero.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let w_ih = params.add(
            format!("{name}.w_ih"),
            uniform_matrix(4 * hidden_dim, input_dim, k, rng),
        );
        let w_hh = params.add(
            format!("{name}.w_hh"),
            uniform_matrix(4 * hidden_dim, hidden_dim, k, rng),
        );
        let bias = params.add(format!("{name}.bias"), Array2::zeros((1, 4 * hidden_dim)));
        LstmCell {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> (NodeId, NodeId) {
        let h = tape.zeros(batch, self.hidden_dim);
        let c = tape.zeros(batch, self.hidden_dim);
        (h, c)
    }

    /// One step over a batch: `x` is `(B, input_dim)`, state is `(B, H)` each.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: NodeId,
        state: (NodeId, NodeId),
    ) -> (NodeId, NodeId) {
        let (h_prev, c_prev) = state;
        let hd = self.hidden_dim;
        let w_ih = tape.param(params, self.w_ih);
        let w_hh = tape.param(params, self.w_hh);
        let bias = tape.param(params, self.bias);

        let from_x = tape.matmul_t(x, w_ih);
        let from_h = tape.matmul_t(h_prev, w_hh);
        let pre = tape.add(from_x, from_h);
        let gates = tape.add_row(pre, bias);

        let i_pre = tape.slice_cols(gates, 0, hd);
        let f_pre = tape.slice_cols(gates, hd, 2 * hd);
        let g_pre = tape.slice_cols(gates, 2 * hd, 3 * hd);
        let o_pre = tape.slice_cols(gates, 3 * hd, 4 * hd);

        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let keep = tape.mul(f, c_prev);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act);
        (h, c)
    }
}

/// Single-vector LSTM step: the standard gate equations applied to one input.
/// Validates dimensions against the cell before evaluating.
pub fn lstm_step(
    params: &ParamSet,
    cell: &LstmCell,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    if x.len() != cell.input_dim {
        return Err(NnError::DimensionMismatch {
            expected: format!("input of {}", cell.input_dim),
            found: format!("{}", x.len()),
        });
    }
    if h.len() != cell.hidden_dim || c.len() != cell.hidden_dim {
        return Err(NnError::DimensionMismatch {
            expected: format!("state of {}", cell.hidden_dim),
            found: format!("h {}, c {}", h.len(), c.len()),
        });
    }
    let mut tape = Tape::new();
    let xn = tape.constant(Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap());
    let hn = tape.constant(Array2::from_shape_vec((1, h.len()), h.to_vec()).unwrap());
    let cn = tape.constant(Array2::from_shape_vec((1, c.len()), c.to_vec()).unwrap());
    let (h_next, c_next) = cell.step(&mut tape, params, xn, (hn, cn));
    Ok((
        tape.value(h_next).row(0).to_vec(),
        tape.value(c_next).row(0).to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell(params: &mut ParamSet, input: usize, hidden: usize) -> LstmCell {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(params, "z", input, hidden, &mut rng);
        params.value_mut(cell.w_ih).fill(0.0);
        params.value_mut(cell.w_hh).fill(0.0);
        cell
    }

    #[test]
    fn zero_params_zero_cell_state_stays_zero() {
        let mut params = ParamSet::new();
        let cell = zero_cell(&mut params, 3, 4);
        let (h, c) = lstm_step(&params, &cell, &[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn zero_params_halve_existing_cell_state() {
        let mut params = ParamSet::new();
        let cell = zero_cell(&mut params, 2, 3);
        let c0 = [1.0, 2.0, -1.5];
        let (h, c) = lstm_step(&params, &cell, &[0.3, 0.7], &[0.0; 3], &c0).unwrap();
        for j in 0..3 {
            let c_expect = 0.5 * c0[j];
            assert!((c[j] - c_expect).abs() < 1e-15);
            let h_expect = 0.5 * c_expect.tanh();
            assert!((h[j] - h_expect).abs() < 1e-15);
        }
    }

    #[test]
    fn random_cell_matches_independent_gate_evaluation() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cell = LstmCell::new(&mut params, "r", 2, 3, &mut rng);
        // Give the bias some structure too.
        for b in params.value_mut(cell.bias).iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = [0.4, -1.1];
        let h0 = [0.2, -0.3, 0.05];
        let c0 = [-0.6, 0.9, 0.1];
        let (h, c) = lstm_step(&params, &cell, &x, &h0, &c0).unwrap();

        // Independent scalar evaluation of the gate formulas.
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let w_ih = params.value(cell.w_ih);
        let w_hh = params.value(cell.w_hh);
        let bias = params.value(cell.bias);
        for j in 0..3 {
            let pre = |block: usize| {
                let row = block * 3 + j;
                let mut acc = bias[(0, row)];
                for (k, &xv) in x.iter().enumerate() {
                    acc += w_ih[(row, k)] * xv;
                }
                for (k, &hv) in h0.iter().enumerate() {
                    acc += w_hh[(row, k)] * hv;
                }
                acc
            };
            let i = sig(pre(0));
            let f = sig(pre(1));
            let g = pre(2).tanh();
            let o = sig(pre(3));
            let c_expect = f * c0[j] + i * g;
            let h_expect = o * c_expect.tanh();
            assert!((c[j] - c_expect).abs() < 1e-12, "c[{j}]");
            assert!((h[j] - h_expect).abs() < 1e-12, "h[{j}]");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut params = ParamSet::new();
        let cell = zero_cell(&mut params, 2, 3);
        let err = lstm_step(&params, &cell, &[1.0], &[0.0; 3], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, NnError::DimensionMismatch { .. }));
    }
}
