//! LSTM building blocks: single cell, stacked layers, and a bidirectional
//! wrapper whose per-step output is the *sum* of the forward and backward
//! hidden outputs at the corresponding position.
//!
//! Cell update, with sigmoid gates and tanh cell contents:
//!
//! ```text
//! i = sigmoid(W_i x + U_i h_prev + b_i)
//! f = sigmoid(W_f x + U_f h_prev + b_f)
//! o = sigmoid(W_o x + U_o h_prev + b_o)
//! u = tanh   (W_u x + U_u h_prev + b_u)
//! c = u * i + c_prev * f
//! h = o * tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::params::{ParamStore, TapeBinding};
use crate::rng::RngState;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// One LSTM cell's parameters, bound as leaves on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    pub w_input: NodeId,
    pub u_input: NodeId,
    pub b_input: NodeId,
    pub w_forget: NodeId,
    pub u_forget: NodeId,
    pub b_forget: NodeId,
    pub w_output: NodeId,
    pub u_output: NodeId,
    pub b_output: NodeId,
    pub w_update: NodeId,
    pub u_update: NodeId,
    pub b_update: NodeId,
}

/// Hidden and cell state after a step.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

const GATES: [&str; 4] = ["input", "forget", "output", "update"];

/// Register the 12 tensors of one cell under `{prefix}.{w,u,b}_{gate}`.
/// Weights are drawn from U[-radius, radius) using a stream derived from the
/// tensor name; biases start at zero.
pub fn register_lstm_cell(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    radius: f64,
    rng: &RngState,
) -> Result<()> {
    for gate in GATES {
        let w_name = format!("{prefix}.w_{gate}");
        let u_name = format!("{prefix}.u_{gate}");
        let b_name = format!("{prefix}.b_{gate}");
        let mut wr = rng.derive(&w_name);
        let mut ur = rng.derive(&u_name);
        store.register(
            &w_name,
            Tensor::uniform(vec![hidden_dim, input_dim], -radius, radius, &mut wr),
        )?;
        store.register(
            &u_name,
            Tensor::uniform(vec![hidden_dim, hidden_dim], -radius, radius, &mut ur),
        )?;
        store.register(&b_name, Tensor::zeros(vec![hidden_dim]))?;
    }
    Ok(())
}

pub fn register_bilstm(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    radius: f64,
    rng: &RngState,
) -> Result<()> {
    register_lstm_cell(store, &format!("{prefix}.forward"), input_dim, hidden_dim, radius, rng)?;
    register_lstm_cell(store, &format!("{prefix}.backward"), input_dim, hidden_dim, radius, rng)
}

impl LstmCellParams {
    pub fn bind(binding: &TapeBinding, prefix: &str) -> Result<Self> {
        Ok(LstmCellParams {
            w_input: binding.id(&format!("{prefix}.w_input"))?,
            u_input: binding.id(&format!("{prefix}.u_input"))?,
            b_input: binding.id(&format!("{prefix}.b_input"))?,
            w_forget: binding.id(&format!("{prefix}.w_forget"))?,
            u_forget: binding.id(&format!("{prefix}.u_forget"))?,
            b_forget: binding.id(&format!("{prefix}.b_forget"))?,
            w_output: binding.id(&format!("{prefix}.w_output"))?,
            u_output: binding.id(&format!("{prefix}.u_output"))?,
            b_output: binding.id(&format!("{prefix}.b_output"))?,
            w_update: binding.id(&format!("{prefix}.w_update"))?,
            u_update: binding.id(&format!("{prefix}.u_update"))?,
            b_update: binding.id(&format!("{prefix}.b_update"))?,
        })
    }

    pub fn hidden_dim(&self, tape: &Tape) -> usize {
        tape.value(self.b_input).len()
    }
}

impl BiLstmParams {
    pub fn bind(binding: &TapeBinding, prefix: &str) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmCellParams::bind(binding, &format!("{prefix}.forward"))?,
            backward: LstmCellParams::bind(binding, &format!("{prefix}.backward"))?,
        })
    }
}

fn gate_preact(
    tape: &mut Tape,
    w: NodeId,
    u: NodeId,
    b: NodeId,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h_prev)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

/// One step of the cell update.
pub fn lstm_cell_step(
    tape: &mut Tape,
    p: &LstmCellParams,
    x: NodeId,
    prev: &LstmState,
) -> Result<LstmState> {
    let i_pre = gate_preact(tape, p.w_input, p.u_input, p.b_input, x, prev.h)?;
    let f_pre = gate_preact(tape, p.w_forget, p.u_forget, p.b_forget, x, prev.h)?;
    let o_pre = gate_preact(tape, p.w_output, p.u_output, p.b_output, x, prev.h)?;
    let u_pre = gate_preact(tape, p.w_update, p.u_update, p.b_update, x, prev.h)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let u = tape.tanh(u_pre);
    let ui = tape.ewmul(u, i)?;
    let cf = tape.ewmul(prev.c, f)?;
    let c = tape.add(ui, cf)?;
    let c_tanh = tape.tanh(c);
    let h = tape.ewmul(o, c_tanh)?;
    Ok(LstmState { h, c })
}

pub fn zero_state(tape: &mut Tape, hidden_dim: usize) -> LstmState {
    LstmState {
        h: tape.leaf_zeros(vec![hidden_dim]),
        c: tape.leaf_zeros(vec![hidden_dim]),
    }
}

/// Run a stack of LSTM layers over a sequence. Layer `l` consumes layer
/// `l-1`'s output sequence; initial states are zero. Returns the top layer's
/// outputs and each layer's final state.
pub fn lstm_forward(
    tape: &mut Tape,
    layers: &[LstmCellParams],
    seq: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<LstmState>)> {
    if seq.is_empty() {
        return Err(Error::argument("lstm_forward: empty sequence"));
    }
    if layers.is_empty() {
        return Err(Error::argument("lstm_forward: no layers"));
    }
    let mut inputs: Vec<NodeId> = seq.to_vec();
    let mut finals = Vec::with_capacity(layers.len());
    for layer in layers {
        let hidden = layer.hidden_dim(tape);
        let mut state = zero_state(tape, hidden);
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            state = lstm_cell_step(tape, layer, x, &state)?;
            outputs.push(state.h);
        }
        finals.push(state);
        inputs = outputs;
    }
    Ok((inputs, finals))
}

/// Bidirectional pass: a forward LSTM over the sequence, a backward LSTM over
/// the reversed sequence, and per position the sum of the two hidden outputs
/// that saw the whole sequence meet there. With 1-indexed time and length n,
/// `out_t = h_t(fwd) + h_(n-t+1)(bwd)`.
pub fn bilstm_forward(tape: &mut Tape, p: &BiLstmParams, seq: &[NodeId]) -> Result<Vec<NodeId>> {
    if seq.is_empty() {
        return Err(Error::argument("bilstm_forward: empty sequence"));
    }
    let (fwd, _) = lstm_forward(tape, &[p.forward], seq)?;
    let reversed: Vec<NodeId> = seq.iter().rev().copied().collect();
    let (bwd, _) = lstm_forward(tape, &[p.backward], &reversed)?;
    let n = seq.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        out.push(tape.add(fwd[t], bwd[n - 1 - t])?);
    }
    Ok(out)
}

/// Question representation: the final hidden output and cell state of every
/// layer, concatenated as `[h_1 .. h_l, c_1 .. c_l]`. With `l` layers of `r`
/// units this is a `2*l*r` vector.
pub fn question_final_encoding(
    tape: &mut Tape,
    layers: &[LstmCellParams],
    token_embeddings: &[NodeId],
) -> Result<NodeId> {
    if token_embeddings.is_empty() {
        return Err(Error::argument("question_final_encoding: empty question"));
    }
    let (_, finals) = lstm_forward(tape, layers, token_embeddings)?;
    let mut parts: Vec<NodeId> = finals.iter().map(|s| s.h).collect();
    parts.extend(finals.iter().map(|s| s.c));
    tape.concat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    /// Register a cell with every tensor zero.
    fn zero_cell(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) {
        register_lstm_cell(store, prefix, input, hidden, 0.0, &RngState::seeded(0)).unwrap();
    }

    fn random_cell(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, seed: u64) {
        register_lstm_cell(store, prefix, input, hidden, 0.08, &RngState::seeded(seed)).unwrap();
    }

    /// Direct transcription of the update rules on plain slices, independent
    /// of the tape machinery.
    fn reference_step(
        store: &ParamStore,
        prefix: &str,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hidden = h_prev.len();
        let gate = |name: &str, act: fn(f64) -> f64| -> Vec<f64> {
            let w = store.value(&format!("{prefix}.w_{name}")).unwrap();
            let u = store.value(&format!("{prefix}.u_{name}")).unwrap();
            let b = store.value(&format!("{prefix}.b_{name}")).unwrap();
            (0..hidden)
                .map(|r| {
                    let wx: f64 = w.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
                    let uh: f64 = u.row(r).iter().zip(h_prev).map(|(a, b)| a * b).sum();
                    act(wx + uh + b.data()[r])
                })
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = gate("input", sig);
        let f = gate("forget", sig);
        let o = gate("output", sig);
        let u = gate("update", f64::tanh);
        let c: Vec<f64> = (0..hidden)
            .map(|k| u[k] * i[k] + c_prev[k] * f[k])
            .collect();
        let h: Vec<f64> = (0..hidden).map(|k| o[k] * c[k].tanh()).collect();
        (h, c)
    }

    fn run_cell(
        store: &ParamStore,
        prefix: &str,
        x: &[f64],
        h0: &[f64],
        c0: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = LstmCellParams::bind(&binding, prefix).unwrap();
        let xid = tape.leaf(Tensor::from_vec(x.to_vec()));
        let prev = LstmState {
            h: tape.leaf(Tensor::from_vec(h0.to_vec())),
            c: tape.leaf(Tensor::from_vec(c0.to_vec())),
        };
        let next = lstm_cell_step(&mut tape, &p, xid, &prev).unwrap();
        (
            tape.value(next.h).data().to_vec(),
            tape.value(next.c).data().to_vec(),
        )
    }

    #[test]
    fn zero_params_give_zero_state() {
        let mut store = ParamStore::new();
        zero_cell(&mut store, "cell", 4, 3);
        let (h, c) = run_cell(&store, "cell", &[0.7, -1.0, 2.0, 0.1], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn zero_params_halve_previous_cell() {
        let mut store = ParamStore::new();
        zero_cell(&mut store, "cell", 2, 3);
        let c0 = [0.8, -0.4, 1.2];
        let (h, c) = run_cell(&store, "cell", &[1.0, 2.0], &[0.0; 3], &c0);
        for k in 0..3 {
            assert!((c[k] - 0.5 * c0[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c0[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_matches_reference_transcription() {
        let mut rng = RngState::seeded(314);
        for trial in 0..100 {
            let mut store = ParamStore::new();
            random_cell(&mut store, "cell", 4, 3, 1000 + trial);
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let h0: Vec<f64> = (0..3).map(|_| rng.uniform(-0.9, 0.9)).collect();
            let c0: Vec<f64> = (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let (h, c) = run_cell(&store, "cell", &x, &h0, &c0);
            let (h_ref, c_ref) = reference_step(&store, "cell", &x, &h0, &c0);
            for k in 0..3 {
                assert!((h[k] - h_ref[k]).abs() < 1e-12);
                assert!((c[k] - c_ref[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gates_bounded_and_h_below_one() {
        let mut store = ParamStore::new();
        random_cell(&mut store, "cell", 3, 5, 9);
        let mut rng = RngState::seeded(55);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.uniform(-10.0, 10.0)).collect();
            let h0: Vec<f64> = (0..5).map(|_| rng.uniform(-0.99, 0.99)).collect();
            let c0: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let (h, _) = run_cell(&store, "cell", &x, &h0, &c0);
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn single_layer_single_step_equals_cell_step() {
        let mut store = ParamStore::new();
        random_cell(&mut store, "l0", 4, 3, 77);
        let x = vec![0.3, -0.6, 0.9, 0.0];

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = LstmCellParams::bind(&binding, "l0").unwrap();
        let xid = tape.leaf(Tensor::from_vec(x.clone()));
        let (outs, finals) = lstm_forward(&mut tape, &[p], &[xid]).unwrap();
        let zero = zero_state(&mut tape, 3);
        let direct = lstm_cell_step(&mut tape, &p, xid, &zero).unwrap();
        assert_eq!(tape.value(outs[0]).data(), tape.value(direct.h).data());
        assert_eq!(tape.value(finals[0].c).data(), tape.value(direct.c).data());
    }

    #[test]
    fn zero_params_yield_zero_outputs_for_any_sequence() {
        let mut store = ParamStore::new();
        zero_cell(&mut store, "l0", 2, 4);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = LstmCellParams::bind(&binding, "l0").unwrap();
        let seq: Vec<NodeId> = (0..5)
            .map(|i| tape.leaf(Tensor::from_vec(vec![i as f64, -(i as f64)])))
            .collect();
        let (outs, _) = lstm_forward(&mut tape, &[p], &seq).unwrap();
        for out in outs {
            assert_eq!(tape.value(out).data(), &[0.0; 4]);
        }
    }

    #[test]
    fn two_layers_match_manual_unrolling() {
        let mut store = ParamStore::new();
        random_cell(&mut store, "l0", 3, 4, 5);
        random_cell(&mut store, "l1", 4, 2, 6);
        let mut rng = RngState::seeded(8);
        let seq_data: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let l0 = LstmCellParams::bind(&binding, "l0").unwrap();
        let l1 = LstmCellParams::bind(&binding, "l1").unwrap();
        let seq: Vec<NodeId> = seq_data
            .iter()
            .map(|x| tape.leaf(Tensor::from_vec(x.clone())))
            .collect();
        let (outs, finals) = lstm_forward(&mut tape, &[l0, l1], &seq).unwrap();

        // manual unroll on the same tape
        let mut s0 = zero_state(&mut tape, 4);
        let mut s1 = zero_state(&mut tape, 2);
        let mut expected = Vec::new();
        for &x in &seq {
            s0 = lstm_cell_step(&mut tape, &l0, x, &s0).unwrap();
            s1 = lstm_cell_step(&mut tape, &l1, s0.h, &s1).unwrap();
            expected.push(s1.h);
        }
        for (got, want) in outs.iter().zip(&expected) {
            let d: f64 = tape
                .value(*got)
                .data()
                .iter()
                .zip(tape.value(*want).data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-12);
        }
        let d = tape.value(finals[1].c).max_abs_diff(tape.value(s1.c));
        assert!(d < 1e-12);
    }

    #[test]
    fn lstm_forward_rejects_empty_sequence() {
        let mut store = ParamStore::new();
        random_cell(&mut store, "l0", 2, 2, 1);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = LstmCellParams::bind(&binding, "l0").unwrap();
        assert!(lstm_forward(&mut tape, &[p], &[]).is_err());
    }

    fn bilstm_fixture(seed: u64, input: usize, hidden: usize) -> ParamStore {
        let mut store = ParamStore::new();
        register_bilstm(&mut store, "bi", input, hidden, 0.08, &RngState::seeded(seed)).unwrap();
        store
    }

    #[test]
    fn bilstm_single_element_is_sum_of_both_directions() {
        let store = bilstm_fixture(42, 3, 2);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = BiLstmParams::bind(&binding, "bi").unwrap();
        let x = tape.leaf(Tensor::from_vec(vec![0.5, -0.2, 0.9]));
        let out = bilstm_forward(&mut tape, &p, &[x]).unwrap();
        assert_eq!(out.len(), 1);

        let zf = zero_state(&mut tape, 2);
        let f = lstm_cell_step(&mut tape, &p.forward, x, &zf).unwrap();
        let zb = zero_state(&mut tape, 2);
        let b = lstm_cell_step(&mut tape, &p.backward, x, &zb).unwrap();
        let expected = tape.add(f.h, b.h).unwrap();
        let d = tape.value(out[0]).max_abs_diff(tape.value(expected));
        assert!(d < 1e-15);
    }

    #[test]
    fn bilstm_matches_two_pass_composition() {
        let store = bilstm_fixture(7, 4, 3);
        let mut rng = RngState::seeded(70);
        let seq_data: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = BiLstmParams::bind(&binding, "bi").unwrap();
        let seq: Vec<NodeId> = seq_data
            .iter()
            .map(|x| tape.leaf(Tensor::from_vec(x.clone())))
            .collect();
        let out = bilstm_forward(&mut tape, &p, &seq).unwrap();

        // independent composition: two lstm_forward calls + index-reversed sum
        let (fwd, _) = lstm_forward(&mut tape, &[p.forward], &seq).unwrap();
        let rev: Vec<NodeId> = seq.iter().rev().copied().collect();
        let (bwd, _) = lstm_forward(&mut tape, &[p.backward], &rev).unwrap();
        let n = seq.len();
        for t in 0..n {
            let expected = tape.add(fwd[t], bwd[n - 1 - t]).unwrap();
            let d = tape.value(out[t]).max_abs_diff(tape.value(expected));
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn bilstm_palindrome_with_tied_directions_is_palindromic() {
        // same params both directions: copy forward values into backward
        let mut store = bilstm_fixture(13, 2, 2);
        for gate in GATES {
            for kind in ["w", "u", "b"] {
                let v = store
                    .value(&format!("bi.forward.{kind}_{gate}"))
                    .unwrap()
                    .clone();
                store
                    .set_value(&format!("bi.backward.{kind}_{gate}"), v)
                    .unwrap();
            }
        }
        let palindrome = [
            vec![0.4, -0.1],
            vec![-0.7, 0.3],
            vec![0.9, 0.9],
            vec![-0.7, 0.3],
            vec![0.4, -0.1],
        ];
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = BiLstmParams::bind(&binding, "bi").unwrap();
        let seq: Vec<NodeId> = palindrome
            .iter()
            .map(|x| tape.leaf(Tensor::from_vec(x.clone())))
            .collect();
        let out = bilstm_forward(&mut tape, &p, &seq).unwrap();
        let n = out.len();
        for t in 0..n {
            let d = tape.value(out[t]).max_abs_diff(tape.value(out[n - 1 - t]));
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn bilstm_zero_backward_degrades_to_forward_lstm() {
        let mut store = ParamStore::new();
        register_lstm_cell(&mut store, "bi.forward", 3, 2, 0.08, &RngState::seeded(3)).unwrap();
        zero_cell(&mut store, "bi.backward", 3, 2);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let p = BiLstmParams::bind(&binding, "bi").unwrap();
        let seq: Vec<NodeId> = (0..6)
            .map(|i| tape.leaf(Tensor::from_vec(vec![0.1 * i as f64, -0.3, 0.8])))
            .collect();
        let out = bilstm_forward(&mut tape, &p, &seq).unwrap();
        let (fwd, _) = lstm_forward(&mut tape, &[p.forward], &seq).unwrap();
        for (o, f) in out.iter().zip(&fwd) {
            assert_eq!(tape.value(*o).data(), tape.value(*f).data());
        }
    }

    #[test]
    fn bilstm_reversal_with_swapped_directions_reverses_outputs() {
        let store = bilstm_fixture(99, 3, 2);
        let mut rng = RngState::seeded(100);
        let seq_data: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();

        let run = |swap: bool, data: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let p = BiLstmParams::bind(&binding, "bi").unwrap();
            let p = if swap {
                BiLstmParams {
                    forward: p.backward,
                    backward: p.forward,
                }
            } else {
                p
            };
            let seq: Vec<NodeId> = data
                .iter()
                .map(|x| tape.leaf(Tensor::from_vec(x.clone())))
                .collect();
            bilstm_forward(&mut tape, &p, &seq)
                .unwrap()
                .into_iter()
                .map(|id| tape.value(id).data().to_vec())
                .collect()
        };

        let plain = run(false, &seq_data);
        let reversed_data: Vec<Vec<f64>> = seq_data.iter().rev().cloned().collect();
        let swapped = run(true, &reversed_data);
        let n = plain.len();
        for t in 0..n {
            for (a, b) in plain[t].iter().zip(&swapped[n - 1 - t]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn question_encoding_dimension_is_two_l_r() {
        // l = 2 layers, r = 512 units -> 2048-dim representation
        let mut store = ParamStore::new();
        zero_cell(&mut store, "q.layer0", 8, 512);
        zero_cell(&mut store, "q.layer1", 512, 512);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let layers = vec![
            LstmCellParams::bind(&binding, "q.layer0").unwrap(),
            LstmCellParams::bind(&binding, "q.layer1").unwrap(),
        ];
        let seq: Vec<NodeId> = (0..3).map(|_| tape.leaf_zeros(vec![8])).collect();
        let enc = question_final_encoding(&mut tape, &layers, &seq).unwrap();
        assert_eq!(tape.value(enc).len(), 2048);
        // zero params -> zero vector
        assert!(tape.value(enc).data().iter().all(|&v| v == 0.0));

        // l = 1, r = 8 -> 16
        let mut store = ParamStore::new();
        random_cell(&mut store, "q.layer0", 4, 8, 2);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let layers = vec![LstmCellParams::bind(&binding, "q.layer0").unwrap()];
        let seq = vec![tape.leaf(Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]))];
        let enc = question_final_encoding(&mut tape, &layers, &seq).unwrap();
        assert_eq!(tape.value(enc).len(), 16);

        assert!(question_final_encoding(&mut tape, &layers, &[]).is_err());
    }

    #[test]
    fn bilstm_gradients_check_out_for_every_parameter_tensor() {
        let store = bilstm_fixture(1234, 3, 2);
        let mut rng = RngState::seeded(4321);
        let seq_data: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();

        for name in store.names().to_vec() {
            let x0 = store.value(&name).unwrap().clone();
            let err = grad_check(
                |tape, probe| {
                    // bind everything, then point the probed tensor's slot at
                    // the probe leaf so the perturbation flows through
                    let binding = store.bind(tape);
                    let mut p = BiLstmParams::bind(&binding, "bi")?;
                    swap_node(&mut p, binding.id(&name)?, probe);
                    let seq: Vec<NodeId> = seq_data
                        .iter()
                        .map(|x| tape.leaf(Tensor::from_vec(x.clone())))
                        .collect();
                    let out = bilstm_forward(tape, &p, &seq)?;
                    let stacked = tape.stack_rows(&out)?;
                    Ok(tape.sum(stacked))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: err {err}");
        }
    }

    /// Point the field that was bound to `bound` at `probe` instead.
    fn swap_node(p: &mut BiLstmParams, bound: NodeId, probe: NodeId) {
        for cell in [&mut p.forward, &mut p.backward] {
            for field in [
                &mut cell.w_input,
                &mut cell.u_input,
                &mut cell.b_input,
                &mut cell.w_forget,
                &mut cell.u_forget,
                &mut cell.b_forget,
                &mut cell.w_output,
                &mut cell.u_output,
                &mut cell.b_output,
                &mut cell.w_update,
                &mut cell.u_update,
                &mut cell.b_update,
            ] {
                if *field == bound {
                    *field = probe;
                }
            }
        }
    }
}
