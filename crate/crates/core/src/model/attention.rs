//! Guided reads from the memory buffer.
//!
//! The guidance is the previous refining output. Temporal weights come from a
//! softmax over cosine similarities between the guidance and each stored state.
//! Channel weights come from a softmax over per-channel cosine similarities,
//! scaled by the channel count so that uniform similarity leaves a state
//! unchanged.

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Result, TensorError, Var};

/// Which parts of the refining branch are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Temporal and channel attention.
    #[default]
    Full,
    /// Temporal attention only; channel weights fixed to one.
    TemporalOnly,
    /// No memory or refining; absolute poses integrate the tracking output.
    None,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [AttentionMode::Full, AttentionMode::TemporalOnly, AttentionMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Full => "full",
            AttentionMode::TemporalOnly => "temporal_only",
            AttentionMode::None => "none",
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(AttentionMode::Full),
            "temporal_only" | "temporal" => Ok(AttentionMode::TemporalOnly),
            "none" | "tracking" => Ok(AttentionMode::None),
            other => Err(format!("unknown attention mode `{other}` (expected full, temporal_only or none)")),
        }
    }
}

/// Output of a memory read.
#[derive(Debug, Clone)]
pub struct MemoryReadout {
    /// Selected memory `M'`, shaped like one stored state.
    pub memory: Var,
    /// Temporal weights `[N]`.
    pub alpha: Var,
    /// Channel weights `[C]` per slot; empty for temporal-only reads.
    pub beta: Vec<Var>,
}

fn temporal_weights(graph: &mut Graph, guidance: Var, states: &[Var]) -> Result<Var> {
    if states.is_empty() {
        return Err(TensorError::invalid("temporal_attention", "memory buffer is empty"));
    }
    let sims = states
        .iter()
        .map(|&m| graph.cosine_similarity(guidance, m))
        .collect::<Result<Vec<_>>>()?;
    let logits = graph.stack(&sims)?;
    graph.softmax(logits)
}

/// `M' = sum_i alpha_i m_i` with `alpha = softmax_i(cos(guidance, m_i))`.
pub fn temporal_attention(graph: &mut Graph, guidance: Var, states: &[Var]) -> Result<MemoryReadout> {
    let alpha = temporal_weights(graph, guidance, states)?;
    let memory = graph.weighted_sum(states, alpha)?;
    Ok(MemoryReadout {
        memory,
        alpha,
        beta: Vec::new(),
    })
}

/// `C * softmax_j(cos(guidance_j, x_j))` over the channels `j` of two `[C, H, W]` tensors.
pub fn channel_weights(graph: &mut Graph, guidance: Var, x: Var) -> Result<Var> {
    let channels = graph.value(x).dims3()?.0;
    let sims = graph.channel_cosine(guidance, x)?;
    let soft = graph.softmax(sims)?;
    Ok(graph.scale(soft, channels as f64))
}

/// Spatial-temporal read: each slot is channel-reweighted by its own `beta_i`, then the
/// slots are blended with the temporal weights `alpha`. `TemporalOnly` dispatches to
/// [`temporal_attention`].
pub fn spatial_channel_attention(
    graph: &mut Graph,
    guidance: Var,
    states: &[Var],
    mode: AttentionMode,
) -> Result<MemoryReadout> {
    match mode {
        AttentionMode::TemporalOnly => temporal_attention(graph, guidance, states),
        AttentionMode::Full => {
            let alpha = temporal_weights(graph, guidance, states)?;
            let mut beta = Vec::with_capacity(states.len());
            let mut reweighted = Vec::with_capacity(states.len());
            for &m in states {
                let b = channel_weights(graph, guidance, m)?;
                reweighted.push(graph.scale_channels(m, b)?);
                beta.push(b);
            }
            let memory = graph.weighted_sum(&reweighted, alpha)?;
            Ok(MemoryReadout { memory, alpha, beta })
        }
        AttentionMode::None => Err(TensorError::invalid("attention", "attention disabled in `none` mode")),
    }
}
