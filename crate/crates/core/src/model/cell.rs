//! Recurrent cell and pose head building blocks.

use crate::tensor::{Graph, Result, Tensor, Var};

/// Hidden and cell state of a convolutional LSTM, both `[C_h, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmState {
    pub fn zeros(graph: &mut Graph, channels: usize, height: usize, width: usize) -> Self {
        let shape = [channels, height, width];
        LstmState {
            hidden: graph.constant(Tensor::zeros(&shape)),
            cell: graph.constant(Tensor::zeros(&shape)),
        }
    }
}

/// Gate convolution of a ConvLSTM: `weight: [4 C_h, C_in + C_h, 3, 3]`, `bias: [4 C_h]`.
/// Output channel blocks are ordered input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmCell {
    pub weight: Var,
    pub bias: Var,
    pub hidden_channels: usize,
}

/// One ConvLSTM update. Returns the output (equal to the new hidden state) and the new state.
pub fn convlstm_step(graph: &mut Graph, cell: &ConvLstmCell, input: Var, state: &LstmState) -> Result<(Var, LstmState)> {
    let ch = cell.hidden_channels;
    let joined = graph.concat_channels(&[input, state.hidden])?;
    let gates = graph.conv2d(joined, cell.weight, cell.bias, 1, 1)?;
    let i_pre = graph.slice_channels(gates, 0, ch)?;
    let f_pre = graph.slice_channels(gates, ch, ch)?;
    let o_pre = graph.slice_channels(gates, 2 * ch, ch)?;
    let g_pre = graph.slice_channels(gates, 3 * ch, ch)?;
    let i = graph.sigmoid(i_pre);
    let f = graph.sigmoid(f_pre);
    let o = graph.sigmoid(o_pre);
    let g = graph.tanh(g_pre);
    let keep = graph.mul(f, state.cell)?;
    let write = graph.mul(i, g)?;
    let cell_state = graph.add(keep, write)?;
    let squashed = graph.tanh(cell_state);
    let hidden = graph.mul(o, squashed)?;
    Ok((
        hidden,
        LstmState {
            hidden,
            cell: cell_state,
        },
    ))
}

/// Pose regression head: global average pooling followed by one affine map to six values.
#[derive(Debug, Clone, Copy)]
pub struct PoseHead {
    /// `[6, C_h]`
    pub weight: Var,
    /// `[6]`
    pub bias: Var,
}

/// Maps a `[C_h, H, W]` output to `[tx, ty, tz, roll, pitch, yaw]`.
pub fn se3_layer(graph: &mut Graph, head: &PoseHead, output: Var) -> Result<Var> {
    let pooled = graph.global_avg_pool(output)?;
    graph.linear(pooled, head.weight, head.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn cell_with(graph: &mut Graph, c_in: usize, ch: usize, weight_fill: f64, bias: Vec<f64>) -> ConvLstmCell {
        ConvLstmCell {
            weight: graph.leaf(Tensor::full(&[4 * ch, c_in + ch, 3, 3], weight_fill)),
            bias: graph.leaf(Tensor::vector(bias)),
            hidden_channels: ch,
        }
    }

    #[test]
    fn zero_parameters_give_half_open_gates_and_zero_state() {
        let mut g = Graph::new();
        let cell = cell_with(&mut g, 2, 3, 0.0, vec![0.0; 12]);
        let x = g.constant(Tensor::from_fn(&[2, 4, 4], |i| i as f64 * 0.1));
        let state = LstmState::zeros(&mut g, 3, 4, 4);
        let (out, next) = convlstm_step(&mut g, &cell, x, &state).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        assert!(g.value(next.cell).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        // Forget bias 20, input gate bias -20: c ~= c_prev.
        let ch = 2;
        let mut bias = vec![0.0; 4 * ch];
        bias[..ch].fill(-20.0);
        bias[ch..2 * ch].fill(20.0);
        let mut g = Graph::new();
        let cell = cell_with(&mut g, 1, ch, 0.0, bias);
        let x = g.constant(Tensor::full(&[1, 3, 3], 0.5));
        let prev_cell = Tensor::from_fn(&[ch, 3, 3], |i| (i as f64 - 8.0) * 0.2);
        let state = LstmState {
            hidden: g.constant(Tensor::zeros(&[ch, 3, 3])),
            cell: g.constant(prev_cell.clone()),
        };
        let (_, next) = convlstm_step(&mut g, &cell, x, &state).unwrap();
        assert!(g.value(next.cell).max_abs_diff(&prev_cell) < 1e-6);
    }

    #[test]
    fn pose_head_with_zero_weights_returns_bias() {
        let mut g = Graph::new();
        let head = PoseHead {
            weight: g.leaf(Tensor::zeros(&[6, 4])),
            bias: g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0])),
        };
        let o = g.constant(Tensor::from_fn(&[4, 2, 2], |i| i as f64));
        let out = se3_layer(&mut g, &head, o).unwrap();
        let pose = Pose::from_vector6(g.value(out).data());
        assert_eq!(pose, Pose::from_translation([1.0, 2.0, 3.0]));
    }
}
