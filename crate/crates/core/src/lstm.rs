//! A single-layer LSTM cell with explicit forward traces and backpropagation through time.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, candidate, output]`.

use rand::Rng;

use crate::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4h x input`
    pub w_input: Tensor,
    /// `4h x h`
    pub w_recurrent: Tensor,
    /// `1 x 4h`
    pub bias: Tensor,
}

/// Everything the backward pass needs from one forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub inputs: Vec<Vec<f64>>,
    /// Activated gates per step, `[i, f, g, o]` stacked.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn last_hidden(&self) -> Option<&[f64]> {
        self.hidden.last().map(Vec::as_slice)
    }
}

impl LstmCell {
    /// Weights uniform in `[-bound, bound]`, forget-gate bias 1, other biases 0.
    pub fn new<R: Rng>(input: usize, hidden: usize, bound: f64, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_input: Tensor::uniform(4 * hidden, input, bound, rng),
            w_recurrent: Tensor::uniform(4 * hidden, hidden, bound, rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_input: Tensor::zeros(4 * hidden, input),
            w_recurrent: Tensor::zeros(4 * hidden, hidden),
            bias: Tensor::zeros(1, 4 * hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_recurrent.cols
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("w_input", &self.w_input),
            ("w_recurrent", &self.w_recurrent),
            ("bias", &self.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [
            ("w_input", &mut self.w_input),
            ("w_recurrent", &mut self.w_recurrent),
            ("bias", &mut self.bias),
        ]
    }

    /// Runs the cell over `inputs` from a zero initial state.
    pub fn forward(&self, inputs: Vec<Vec<f64>>) -> LstmTrace {
        let h = self.hidden_size();
        let steps = inputs.len();
        let mut trace = LstmTrace {
            inputs,
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in &trace.inputs {
            let mut a = self.bias.data.clone();
            self.w_input.matvec_acc(x, &mut a);
            self.w_recurrent.matvec_acc(&h_prev, &mut a);
            for k in 0..h {
                a[k] = sigmoid(a[k]);
                a[h + k] = sigmoid(a[h + k]);
                a[2 * h + k] = a[2 * h + k].tanh();
                a[3 * h + k] = sigmoid(a[3 * h + k]);
            }
            let mut c = vec![0.0; h];
            let mut hid = vec![0.0; h];
            for k in 0..h {
                c[k] = a[h + k] * c_prev[k] + a[k] * a[2 * h + k];
                hid[k] = a[3 * h + k] * c[k].tanh();
            }
            trace.gates.push(a);
            trace.cells.push(c.clone());
            trace.hidden.push(hid.clone());
            h_prev = hid;
            c_prev = c;
        }
        trace
    }

    /// Backpropagates `d_hidden` (one gradient per step, w.r.t. each emitted hidden
    /// state) through the trace. Parameter gradients are accumulated into `grad`;
    /// the returned vectors are the gradients w.r.t. each step's input.
    pub fn backward(&self, trace: &LstmTrace, d_hidden: &[Vec<f64>], grad: &mut LstmCell) -> Vec<Vec<f64>> {
        let h = self.hidden_size();
        let steps = trace.inputs.len();
        debug_assert_eq!(d_hidden.len(), steps);
        let zeros = vec![0.0; h];
        let mut d_inputs = vec![vec![0.0; self.input_size()]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &trace.gates[t];
            let c = &trace.cells[t];
            let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zeros };
            for k in 0..h {
                let dh = d_hidden[t][k] + dh_next[k];
                let (i, f, cand, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = c[k].tanh();
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * cand * i * (1.0 - i);
                da[h + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - cand * cand);
                da[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            grad.w_input.outer_acc(&da, &trace.inputs[t]);
            grad.w_recurrent.outer_acc(&da, h_prev);
            for (b, d) in grad.bias.data.iter_mut().zip(&da) {
                *b += d;
            }
            self.w_input.matvec_t_acc(&da, &mut d_inputs[t]);
            dh_next.fill(0.0);
            self.w_recurrent.matvec_t_acc(&da, &mut dh_next);
        }
        d_inputs
    }
}
