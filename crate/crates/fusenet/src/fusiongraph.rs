//! A symbolic description of where, and through how many layers, the two
//! modality streams interact inside a multistage network.
//!
//! Each interaction is an *event* `F(j)`, numbered from 1 in computation
//! order. An event combines two inputs, each written `source^depth`: the
//! source is a raw modality (`x1`, `x2`) or an earlier event, and the depth
//! is the number of trainable convolution or linear layers on the main path
//! between that source and the event (batch norms and the residual
//! shortcuts do not count).
//!
//! A multistage network with `L` stages of `N` blocks produces, for stage
//! `i` (0-based), writing `m = 2N` for the convs on a stage's main path:
//!
//! ```text
//! F(3i+1) = product( F(3i-1)^(m+1), F(3i)^(m+1) )   squeeze adds one layer
//! F(3i+2) = sum(     F(3i-1)^m,     F(3i+1)^0   )   back onto branch 1
//! F(3i+3) = sum(     F(3i)^m,      F(3i+1)^0   )   back onto branch 2
//! ```
//!
//! with `F(-1) = x1`, `F(0) = x2`, and a terminal channel concatenation
//! `F(3L+1) = concat(F(3L-1)^0, F(3L)^0)`: `3L+1` events in total.
//!
//! [`enumerate_fusions`] generates this schedule from `(L, N)` alone;
//! [`trace_network`] recovers the schedule a concrete [`Network`] actually
//! computes by walking its layers; [`verify_against_network`] diffs the
//! two, so a claimed fusion schedule can be certified against the code
//! that runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Network;

/// How an event combines its two inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOp {
    Product,
    Sum,
    Concat,
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionOp::Product => "product",
            FusionOp::Sum => "sum",
            FusionOp::Concat => "concat",
        })
    }
}

/// Where an event input comes from: a raw modality or an earlier event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Source {
    X1,
    X2,
    Event(u32),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::X1 => f.write_str("x1"),
            Source::X2 => f.write_str("x2"),
            Source::Event(j) => write!(f, "F{j}"),
        }
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        s.to_string()
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x1" => Ok(Source::X1),
            "x2" => Ok(Source::X2),
            _ => {
                let j = s
                    .strip_prefix('F')
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&j| j >= 1)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "source must be \"x1\", \"x2\", or \"F<n>\", got {s:?}"
                        ))
                    })?;
                Ok(Source::Event(j))
            }
        }
    }
}

impl TryFrom<String> for Source {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One input of an event: a source and the trainable-layer depth between
/// that source and the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionInput {
    pub source: Source,
    pub depth: u32,
}

/// One interaction between the two streams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionEvent {
    pub index: u32,
    pub op: FusionOp,
    pub inputs: Vec<FusionInput>,
}

impl fmt::Display for FusionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{} = {}(", self.index, self.op)?;
        for (k, input) in self.inputs.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}^{}", input.source, input.depth)?;
        }
        f.write_str(")")
    }
}

/// The complete fusion schedule of one architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionGraph {
    pub stages: u32,
    pub blocks_per_stage: u32,
    pub events: Vec<FusionEvent>,
}

impl FusionGraph {
    /// The final event (always the terminal concatenation).
    pub fn terminal(&self) -> &FusionEvent {
        self.events.last().expect("a fusion graph always has a terminal event")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fusion graphs always serialize")
    }
}

fn input(source: Source, depth: usize) -> FusionInput {
    FusionInput { source, depth: depth as u32 }
}

/// Core constructor shared by the enumerator and the tracer.
/// `main_convs[i]` is the conv count on one branch's main path in stage
/// `i`; the first `fused_stages` stages end in a fusion block whose squeeze
/// path holds `squeeze_convs` convs. Unfused stages only deepen the
/// branches, so their depth accumulates into the next event's inputs.
fn build_events(main_convs: &[usize], fused_stages: usize, squeeze_convs: usize) -> Vec<FusionEvent> {
    let mut events = Vec::new();
    let (mut src1, mut src2) = (Source::X1, Source::X2);
    let (mut d1, mut d2) = (0usize, 0usize);
    let mut next = 1u32;
    for (i, &m) in main_convs.iter().enumerate() {
        if i < fused_stages {
            let p = next;
            events.push(FusionEvent {
                index: p,
                op: FusionOp::Product,
                inputs: vec![
                    input(src1, d1 + m + squeeze_convs),
                    input(src2, d2 + m + squeeze_convs),
                ],
            });
            events.push(FusionEvent {
                index: p + 1,
                op: FusionOp::Sum,
                inputs: vec![input(src1, d1 + m), input(Source::Event(p), 0)],
            });
            events.push(FusionEvent {
                index: p + 2,
                op: FusionOp::Sum,
                inputs: vec![input(src2, d2 + m), input(Source::Event(p), 0)],
            });
            src1 = Source::Event(p + 1);
            src2 = Source::Event(p + 2);
            d1 = 0;
            d2 = 0;
            next += 3;
        } else {
            d1 += m;
            d2 += m;
        }
    }
    events.push(FusionEvent {
        index: next,
        op: FusionOp::Concat,
        inputs: vec![input(src1, d1), input(src2, d2)],
    });
    events
}

/// The fusion schedule of a fully fused multistage architecture with
/// `stages` stages of `blocks_per_stage` residual blocks.
pub fn enumerate_fusions(stages: u32, blocks_per_stage: u32) -> Result<FusionGraph> {
    if stages == 0 || blocks_per_stage == 0 {
        return Err(Error::Config(format!(
            "fusion graphs need at least one stage and one block, got ({stages}, {blocks_per_stage})"
        )));
    }
    let main = vec![2 * blocks_per_stage as usize; stages as usize];
    Ok(FusionGraph {
        stages,
        blocks_per_stage,
        events: build_events(&main, stages as usize, 1),
    })
}

/// Recovers the fusion schedule a built network actually computes, by
/// counting its layers. Only the multistage strategy has fusion events.
pub fn trace_network(net: &Network) -> Result<FusionGraph> {
    let s = net.fusion_structure().ok_or_else(|| {
        Error::Config(format!(
            "strategy {} has no within-network fusion events to trace",
            net.config().strategy.name()
        ))
    })?;
    Ok(FusionGraph {
        stages: s.stages as u32,
        blocks_per_stage: net.config().blocks_per_stage,
        events: build_events(&s.main_convs_per_stage, s.fused_stages, s.squeeze_convs),
    })
}

/// Outcome of checking a claimed schedule against a real network.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub matched: bool,
    pub expected_events: usize,
    pub observed_events: usize,
    /// Human-readable differences, empty when `matched`.
    pub mismatches: Vec<String>,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.matched {
            write!(f, "matched: {} events", self.expected_events)
        } else {
            writeln!(
                f,
                "mismatch: {} expected, {} observed",
                self.expected_events, self.observed_events
            )?;
            for m in &self.mismatches {
                writeln!(f, "  {m}")?;
            }
            Ok(())
        }
    }
}

fn diff_graphs(expected: &FusionGraph, observed: &FusionGraph) -> VerifyReport {
    let mut mismatches = Vec::new();
    let by_index = |g: &FusionGraph| -> BTreeMap<u32, FusionEvent> {
        g.events.iter().map(|e| (e.index, e.clone())).collect()
    };
    let exp = by_index(expected);
    let obs = by_index(observed);
    let mut indices: Vec<u32> = exp.keys().chain(obs.keys()).copied().collect();
    indices.sort_unstable();
    indices.dedup();
    for j in indices {
        match (exp.get(&j), obs.get(&j)) {
            (Some(e), None) => mismatches.push(format!("{e} expected but absent from network")),
            (None, Some(o)) => mismatches.push(format!("{o} observed but not in expected graph")),
            (Some(e), Some(o)) => {
                if e.op != o.op {
                    mismatches.push(format!("F{j}: op expected {}, observed {}", e.op, o.op));
                    continue;
                }
                if e.inputs.len() != o.inputs.len() {
                    mismatches.push(format!(
                        "F{j}: {} inputs expected, {} observed",
                        e.inputs.len(),
                        o.inputs.len()
                    ));
                    continue;
                }
                for (k, (ei, oi)) in e.inputs.iter().zip(o.inputs.iter()).enumerate() {
                    if ei.source != oi.source {
                        mismatches.push(format!(
                            "F{j} input {k}: source expected {}, observed {}",
                            ei.source, oi.source
                        ));
                    }
                    if ei.depth != oi.depth {
                        mismatches.push(format!(
                            "F{j} input {k} ({}): depth expected {}, observed {}",
                            ei.source, ei.depth, oi.depth
                        ));
                    }
                }
            }
            (None, None) => unreachable!(),
        }
    }
    VerifyReport {
        matched: mismatches.is_empty(),
        expected_events: expected.events.len(),
        observed_events: observed.events.len(),
        mismatches,
    }
}

/// Traces `net` and diffs the result against `expected`, event by event.
pub fn verify_against_network(expected: &FusionGraph, net: &Network) -> Result<VerifyReport> {
    let observed = trace_network(net)?;
    Ok(diff_graphs(expected, &observed))
}
