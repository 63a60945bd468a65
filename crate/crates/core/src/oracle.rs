//! Event-driven timing simulation: the ground-truth propagation delay of an
//! instruction given the one executed before it.
//!
//! The circuit starts in the zero-delay steady state of the previous stimulus.
//! The new stimulus is applied at t = 0 and gate output changes propagate
//! through a time-ordered queue with inertial delays: a gate holds at most one
//! pending change, and a re-evaluation that contradicts it cancels it. The
//! measured delay is the time of the last change on any primary output.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{parse_hex32, Instruction, OpKind, SubOp, Trace};
use crate::netlist::{ExecUnit, Netlist, NetlistError, NodeId, Picos};

pub const PROFILE_FORMAT: &str = "# profilefmt v1";
pub const PROFILE_HEADER: &str = "kind,subop,op1,op2,prev_op1,prev_op2,prev_output,delay_ps,prev_kind,prev_subop";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("stimulus has {got} bits, netlist has {expected} primary inputs")]
    Width { expected: usize, got: usize },
    #[error("cannot profile an empty trace")]
    EmptyTrace,
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayMeasurement {
    pub delay: Picos,
    /// First (up to) 32 primary outputs packed little-endian at quiescence.
    pub output_word: u32,
    /// Gate output changes applied during settling.
    pub events: u64,
}

/// Node values and the time each node last changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitState {
    pub node_values: Vec<bool>,
    pub stable_time: Vec<Picos>,
}

/// A netlist prepared for repeated settling.
pub struct TimingSim<'a> {
    netlist: &'a Netlist,
    order: Vec<usize>,
    gate_of: Vec<u32>,
    fanout: Vec<Vec<u32>>,
    is_output: Vec<bool>,
    delays: Vec<Picos>,
}

const NO_GATE: u32 = u32::MAX;

impl<'a> TimingSim<'a> {
    pub fn new(netlist: &'a Netlist) -> Result<Self, OracleError> {
        Self::with_delay_scale(netlist, None)
    }

    /// `scale` multiplies every gate delay (rounded, at least 1 ps). It models
    /// a uniform process/voltage/temperature derating and is off by default.
    pub fn with_delay_scale(netlist: &'a Netlist, scale: Option<f64>) -> Result<Self, OracleError> {
        let order = netlist.topo_order()?;
        let n = netlist.node_count();
        let mut gate_of = vec![NO_GATE; n];
        let mut fanout = vec![Vec::new(); n];
        for (gi, g) in netlist.gates.iter().enumerate() {
            gate_of[g.id as usize] = gi as u32;
            for &f in &g.fanin {
                let list: &mut Vec<u32> = &mut fanout[f as usize];
                if list.last() != Some(&(gi as u32)) {
                    list.push(gi as u32);
                }
            }
        }
        let mut is_output = vec![false; n];
        for p in &netlist.outputs {
            is_output[p.node as usize] = true;
        }
        let delays = netlist
            .gates
            .iter()
            .map(|g| match scale {
                Some(s) => ((g.delay as f64 * s).round() as Picos).max(1),
                None => g.delay,
            })
            .collect();
        Ok(TimingSim { netlist, order, gate_of, fanout, is_output, delays })
    }

    pub fn netlist(&self) -> &Netlist {
        self.netlist
    }

    fn check(&self, v: &[bool]) -> Result<(), OracleError> {
        let expected = self.netlist.inputs.len();
        if v.len() != expected {
            return Err(OracleError::Width { expected, got: v.len() });
        }
        Ok(())
    }

    /// Zero-delay steady state under `inputs`.
    pub fn steady_state(&self, inputs: &[bool]) -> Result<CircuitState, OracleError> {
        self.check(inputs)?;
        let node_values = self.netlist.evaluate_in_order(&self.order, inputs);
        let stable_time = vec![0; node_values.len()];
        Ok(CircuitState { node_values, stable_time })
    }

    pub fn settle(&self, prev_inputs: &[bool], new_inputs: &[bool]) -> Result<DelayMeasurement, OracleError> {
        self.settle_state(prev_inputs, new_inputs).map(|(m, _)| m)
    }

    /// As [`settle`](Self::settle), also returning the final circuit state.
    pub fn settle_state(
        &self,
        prev_inputs: &[bool],
        new_inputs: &[bool],
    ) -> Result<(DelayMeasurement, CircuitState), OracleError> {
        self.check(new_inputs)?;
        let mut state = self.steady_state(prev_inputs)?;
        let values = &mut state.node_values;
        let n_gates = self.netlist.gates.len();

        let mut pending: Vec<Option<(Picos, bool)>> = vec![None; values.len()];
        let mut queue: BinaryHeap<Reverse<(Picos, NodeId)>> = BinaryHeap::new();
        let mut dirty: Vec<u32> = Vec::new();
        let mut mark = vec![false; n_gates];
        let mut events = 0u64;
        let mut last_output_change = 0;
        let mut buf = [false; 3];

        let touch = |node: usize, dirty: &mut Vec<u32>, mark: &mut Vec<bool>| {
            for &g in &self.fanout[node] {
                if !mark[g as usize] {
                    mark[g as usize] = true;
                    dirty.push(g);
                }
            }
        };

        for (p, &v) in self.netlist.inputs.iter().zip(new_inputs) {
            let node = p.node as usize;
            if values[node] != v {
                values[node] = v;
                touch(node, &mut dirty, &mut mark);
            }
        }

        let mut now: Picos = 0;
        loop {
            dirty.sort_unstable();
            for &gi in &dirty {
                mark[gi as usize] = false;
                let g = &self.netlist.gates[gi as usize];
                for (k, &f) in g.fanin.iter().enumerate() {
                    buf[k] = values[f as usize];
                }
                let next = g.kind.eval(&buf[..g.fanin.len()]);
                let out = g.id as usize;
                match pending[out] {
                    Some((_, v)) if v == next => {}
                    Some(_) => pending[out] = None,
                    None if next != values[out] => {
                        let at = now + self.delays[gi as usize];
                        pending[out] = Some((at, next));
                        queue.push(Reverse((at, g.id)));
                    }
                    None => {}
                }
            }
            dirty.clear();

            let Some(&Reverse((t, _))) = queue.peek() else { break };
            now = t;
            while let Some(&Reverse((t, node))) = queue.peek() {
                if t != now {
                    break;
                }
                queue.pop();
                let node = node as usize;
                match pending[node] {
                    Some((at, v)) if at == now => {
                        pending[node] = None;
                        values[node] = v;
                        state.stable_time[node] = now;
                        events += 1;
                        if self.is_output[node] {
                            last_output_change = now;
                        }
                        touch(node, &mut dirty, &mut mark);
                    }
                    _ => {}
                }
            }
        }
        debug_assert!(self.gate_of.len() == values.len());

        let output_word = self
            .netlist
            .outputs
            .iter()
            .take(32)
            .enumerate()
            .fold(0u32, |acc, (i, p)| acc | ((values[p.node as usize] as u32) << i));
        Ok((
            DelayMeasurement { delay: last_output_change, output_word, events },
            state,
        ))
    }
}

/// One-shot settle; prefer [`TimingSim`] when settling many stimuli.
pub fn settle(n: &Netlist, prev_inputs: &[bool], new_inputs: &[bool]) -> Result<DelayMeasurement, OracleError> {
    TimingSim::new(n)?.settle(prev_inputs, new_inputs)
}

/// One profiled instruction: what executed, the history it executed after,
/// and its measured propagation delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub instr: Instruction,
    pub prev_kind: OpKind,
    pub prev_subop: SubOp,
    pub prev_op1: u32,
    pub prev_op2: u32,
    pub prev_output: u32,
    pub delay: Picos,
}

impl ProfileRecord {
    pub fn prev_instruction(&self) -> Instruction {
        Instruction {
            kind: self.prev_kind,
            subop: self.prev_subop,
            op1: self.prev_op1,
            op2: self.prev_op2,
        }
    }
}

/// Delay oracle bound to an execution unit.
pub struct ExecOracle<'a> {
    pub unit: &'a ExecUnit,
    sim: TimingSim<'a>,
}

impl<'a> ExecOracle<'a> {
    pub fn new(unit: &'a ExecUnit) -> Result<Self, OracleError> {
        Self::with_delay_scale(unit, None)
    }

    pub fn with_delay_scale(unit: &'a ExecUnit, scale: Option<f64>) -> Result<Self, OracleError> {
        Ok(ExecOracle { unit, sim: TimingSim::with_delay_scale(&unit.netlist, scale)? })
    }

    pub fn sim(&self) -> &TimingSim<'a> {
        &self.sim
    }

    pub fn measure_pair(&self, prev: &Instruction, cur: &Instruction) -> Result<DelayMeasurement, OracleError> {
        self.sim.settle(&self.unit.stimulus(prev), &self.unit.stimulus(cur))
    }

    /// Profiles `cur` executing right after `prev`.
    pub fn record(&self, prev: &Instruction, cur: &Instruction) -> Result<ProfileRecord, OracleError> {
        let m = self.measure_pair(prev, cur)?;
        Ok(ProfileRecord {
            instr: *cur,
            prev_kind: prev.kind,
            prev_subop: prev.subop,
            prev_op1: prev.op1,
            prev_op2: prev.op2,
            prev_output: self.unit.reference(prev),
            delay: m.delay,
        })
    }

    /// Re-runs a record's stimulus pair.
    pub fn replay(&self, r: &ProfileRecord) -> Result<DelayMeasurement, OracleError> {
        self.measure_pair(&r.prev_instruction(), &r.instr)
    }

    /// Folds settling over the trace. The first instruction executes after
    /// the all-zero stimulus (ADD 0, 0).
    pub fn profile_trace(&self, trace: &Trace) -> Result<Vec<ProfileRecord>, OracleError> {
        if trace.is_empty() {
            return Err(OracleError::EmptyTrace);
        }
        let mut prev = Instruction::zero();
        let mut prev_stim = self.unit.stimulus(&prev);
        let mut prev_output = 0u32;
        let mut out = Vec::with_capacity(trace.len());
        for instr in &trace.instructions {
            let stim = self.unit.stimulus(instr);
            let m = self.sim.settle(&prev_stim, &stim)?;
            out.push(ProfileRecord {
                instr: *instr,
                prev_kind: prev.kind,
                prev_subop: prev.subop,
                prev_op1: prev.op1,
                prev_op2: prev.op2,
                prev_output,
                delay: m.delay,
            });
            prev = *instr;
            prev_stim = stim;
            prev_output = m.output_word;
        }
        Ok(out)
    }
}

pub fn profile_trace(unit: &ExecUnit, trace: &Trace) -> Result<Vec<ProfileRecord>, OracleError> {
    ExecOracle::new(unit)?.profile_trace(trace)
}

pub(crate) fn format_record_fields(r: &ProfileRecord, out: &mut String) {
    write!(
        out,
        "{},{},{:08X},{:08X},{:08X},{:08X},{:08X},{},{},{}",
        r.instr.kind,
        r.instr.subop,
        r.instr.op1,
        r.instr.op2,
        r.prev_op1,
        r.prev_op2,
        r.prev_output,
        r.delay,
        r.prev_kind,
        r.prev_subop
    )
    .unwrap();
}

/// Parses the ten profile columns from `fields`.
pub(crate) fn parse_record_fields(fields: &[&str]) -> Result<ProfileRecord, String> {
    if fields.len() != 10 {
        return Err(format!("expected 10 profile columns, found {}", fields.len()));
    }
    let kind: OpKind = fields[0].parse()?;
    let subop: SubOp = fields[1].parse()?;
    let prev_kind: OpKind = fields[8].parse()?;
    let prev_subop: SubOp = fields[9].parse()?;
    if !kind.accepts(subop) || !prev_kind.accepts(prev_subop) {
        return Err("subop does not match kind".into());
    }
    Ok(ProfileRecord {
        instr: Instruction { kind, subop, op1: parse_hex32(fields[2])?, op2: parse_hex32(fields[3])? },
        prev_kind,
        prev_subop,
        prev_op1: parse_hex32(fields[4])?,
        prev_op2: parse_hex32(fields[5])?,
        prev_output: parse_hex32(fields[6])?,
        delay: fields[7].parse().map_err(|_| format!("bad delay `{}`", fields[7]))?,
    })
}

pub fn format_profile_csv(records: &[ProfileRecord]) -> String {
    let mut out = String::with_capacity(80 * (records.len() + 2));
    out.push_str(PROFILE_FORMAT);
    out.push('\n');
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for r in records {
        format_record_fields(r, &mut out);
        out.push('\n');
    }
    out
}

pub fn parse_profile_csv(text: &str) -> Result<Vec<ProfileRecord>, OracleError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PROFILE_FORMAT => {}
        Some((_, h)) => {
            return Err(OracleError::Parse { line: 1, msg: format!("expected `{PROFILE_FORMAT}`, found `{}`", h.trim()) })
        }
        None => return Err(OracleError::Parse { line: 1, msg: "missing header".into() }),
    }
    match lines.next() {
        Some((_, h)) if h.trim() == PROFILE_HEADER => {}
        _ => return Err(OracleError::Parse { line: 2, msg: "missing column header".into() }),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        out.push(parse_record_fields(&fields).map_err(|msg| OracleError::Parse { line: idx + 1, msg })?);
    }
    Ok(out)
}

pub fn write_profile_csv(records: &[ProfileRecord], path: &Path) -> Result<(), OracleError> {
    fs::write(path, format_profile_csv(records))?;
    Ok(())
}

pub fn read_profile_csv(path: &Path) -> Result<Vec<ProfileRecord>, OracleError> {
    parse_profile_csv(&fs::read_to_string(path)?)
}
