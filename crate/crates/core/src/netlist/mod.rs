//! Combinational gate-level netlists: the IR shared by the execution unit
//! model and the generated classifier hardware.

mod build;
mod io;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{
    build_array_multiplier, build_exec_unit, build_logic_unit, build_ripple_adder, ExecLayout,
    ExecUnit, NetlistBuilder, Signal,
};
pub use io::{format_netlist, parse_netlist, read_netlist_file, write_netlist_file, NETLIST_HEADER};

pub type NodeId = u32;

/// Gate propagation delays in picoseconds.
pub type Picos = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetlistError {
    #[error("width {width} outside [{min}, {max}]")]
    Width { width: u32, min: u32, max: u32 },
    #[error("combinational cycle through node {node}")]
    Cycle { node: NodeId },
    #[error("gate {id}: {kind} expects {expected} fanin, got {got}")]
    Arity {
        id: NodeId,
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("gate {id}: delay must be at least 1 ps")]
    ZeroDelay { id: NodeId },
    #[error("node {id} defined twice")]
    Duplicate { id: NodeId },
    #[error("node {id} referenced but never defined")]
    Undefined { id: NodeId },
    #[error("port `{0}` not found")]
    MissingPort(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    And,
    Or,
    Xor,
    Not,
    Nand,
    Nor,
    /// fanin `[sel, a, b]`: output is `b` when `sel` is high, else `a`.
    Mux2,
    Buf,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::And,
        GateKind::Or,
        GateKind::Xor,
        GateKind::Not,
        GateKind::Nand,
        GateKind::Nor,
        GateKind::Mux2,
        GateKind::Buf,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::Not | GateKind::Buf => 1,
            GateKind::Mux2 => 3,
            _ => 2,
        }
    }

    #[inline]
    pub fn eval(self, v: &[bool]) -> bool {
        match self {
            GateKind::And => v[0] & v[1],
            GateKind::Or => v[0] | v[1],
            GateKind::Xor => v[0] ^ v[1],
            GateKind::Not => !v[0],
            GateKind::Nand => !(v[0] & v[1]),
            GateKind::Nor => !(v[0] | v[1]),
            GateKind::Mux2 => {
                if v[0] {
                    v[2]
                } else {
                    v[1]
                }
            }
            GateKind::Buf => v[0],
        }
    }

    /// Bitwise form of [`GateKind::eval`] over 64 independent lanes.
    #[inline]
    pub fn eval_packed(self, v: &[u64]) -> u64 {
        match self {
            GateKind::And => v[0] & v[1],
            GateKind::Or => v[0] | v[1],
            GateKind::Xor => v[0] ^ v[1],
            GateKind::Not => !v[0],
            GateKind::Nand => !(v[0] & v[1]),
            GateKind::Nor => !(v[0] | v[1]),
            GateKind::Mux2 => (v[0] & v[2]) | (!v[0] & v[1]),
            GateKind::Buf => v[0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Or => "OR",
            GateKind::Xor => "XOR",
            GateKind::Not => "NOT",
            GateKind::Nand => "NAND",
            GateKind::Nor => "NOR",
            GateKind::Mux2 => "MUX2",
            GateKind::Buf => "BUF",
        }
    }

    pub fn from_name(s: &str) -> Option<GateKind> {
        GateKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for GateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-kind gate delays used by the circuit builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateDelays {
    pub not: Picos,
    pub buf: Picos,
    pub and: Picos,
    pub or: Picos,
    pub nand: Picos,
    pub nor: Picos,
    pub xor: Picos,
    pub mux2: Picos,
}

impl Default for GateDelays {
    fn default() -> Self {
        GateDelays {
            not: 1,
            buf: 1,
            and: 2,
            or: 2,
            nand: 2,
            nor: 2,
            xor: 3,
            mux2: 3,
        }
    }
}

impl GateDelays {
    pub fn unit() -> Self {
        GateDelays {
            not: 1,
            buf: 1,
            and: 1,
            or: 1,
            nand: 1,
            nor: 1,
            xor: 1,
            mux2: 1,
        }
    }

    pub fn of(&self, kind: GateKind) -> Picos {
        match kind {
            GateKind::And => self.and,
            GateKind::Or => self.or,
            GateKind::Xor => self.xor,
            GateKind::Not => self.not,
            GateKind::Nand => self.nand,
            GateKind::Nor => self.nor,
            GateKind::Mux2 => self.mux2,
            GateKind::Buf => self.buf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub id: NodeId,
    pub kind: GateKind,
    pub fanin: Vec<NodeId>,
    pub delay: Picos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub node: NodeId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub gates: Vec<Gate>,
}

impl Netlist {
    /// One past the largest node id in use.
    pub fn node_count(&self) -> usize {
        let max_in = self.inputs.iter().map(|p| p.node).max();
        let max_gate = self.gates.iter().map(|g| g.id).max();
        max_in.max(max_gate).map_or(0, |m| m as usize + 1)
    }

    pub fn input_ids(&self) -> Vec<NodeId> {
        self.inputs.iter().map(|p| p.node).collect()
    }

    pub fn output_ids(&self) -> Vec<NodeId> {
        self.outputs.iter().map(|p| p.node).collect()
    }

    pub fn input_named(&self, name: &str) -> Result<NodeId, NetlistError> {
        self.inputs
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.node)
            .ok_or_else(|| NetlistError::MissingPort(name.to_string()))
    }

    pub fn output_named(&self, name: &str) -> Result<NodeId, NetlistError> {
        self.outputs
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.node)
            .ok_or_else(|| NetlistError::MissingPort(name.to_string()))
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Structural checks: unique definitions, arities, delays, and that every
    /// referenced node is defined.
    pub fn validate(&self) -> Result<(), NetlistError> {
        let n = self.node_count();
        let mut defined = vec![false; n];
        let mut define = |id: NodeId| {
            let slot = &mut defined[id as usize];
            if *slot {
                return Err(NetlistError::Duplicate { id });
            }
            *slot = true;
            Ok(())
        };
        for p in &self.inputs {
            define(p.node)?;
        }
        for g in &self.gates {
            define(g.id)?;
        }
        for g in &self.gates {
            if g.fanin.len() != g.kind.arity() {
                return Err(NetlistError::Arity {
                    id: g.id,
                    kind: g.kind,
                    expected: g.kind.arity(),
                    got: g.fanin.len(),
                });
            }
            if g.delay == 0 {
                return Err(NetlistError::ZeroDelay { id: g.id });
            }
            for &f in &g.fanin {
                if (f as usize) >= n || !defined[f as usize] {
                    return Err(NetlistError::Undefined { id: f });
                }
            }
        }
        for p in &self.outputs {
            if (p.node as usize) >= n || !defined[p.node as usize] {
                return Err(NetlistError::Undefined { id: p.node });
            }
        }
        Ok(())
    }

    /// Gate indices in a topological order (Kahn's algorithm, ties by
    /// position). Fails with a member of some cycle when the graph is cyclic.
    pub fn topo_order(&self) -> Result<Vec<usize>, NetlistError> {
        self.validate()?;
        let n = self.node_count();
        let mut gate_of = vec![usize::MAX; n];
        for (gi, g) in self.gates.iter().enumerate() {
            gate_of[g.id as usize] = gi;
        }
        let mut pending = vec![0usize; self.gates.len()];
        let mut fanout: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (gi, g) in self.gates.iter().enumerate() {
            for &f in &g.fanin {
                if gate_of[f as usize] != usize::MAX {
                    pending[gi] += 1;
                }
                fanout[f as usize].push(gi);
            }
        }
        let mut ready: VecDeque<usize> = (0..self.gates.len()).filter(|&g| pending[g] == 0).collect();
        let mut order = Vec::with_capacity(self.gates.len());
        while let Some(gi) = ready.pop_front() {
            order.push(gi);
            for &succ in &fanout[self.gates[gi].id as usize] {
                pending[succ] -= 1;
                if pending[succ] == 0 {
                    ready.push_back(succ);
                }
            }
        }
        if order.len() != self.gates.len() {
            let stuck = (0..self.gates.len())
                .find(|&g| pending[g] > 0)
                .expect("unfinished gate exists");
            return Err(NetlistError::Cycle { node: self.gates[stuck].id });
        }
        Ok(order)
    }

    /// Worst-case input-to-output delay over all paths.
    pub fn static_longest_path(&self) -> Result<Picos, NetlistError> {
        self.path_delay(&self.input_ids(), &self.output_ids())
    }

    /// Longest weighted path starting at any node of `from` and ending at any
    /// node of `to`. Nodes in `from` have arrival time zero; paths that do not
    /// start in `from` are ignored. Returns 0 when no such path exists.
    pub fn path_delay(&self, from: &[NodeId], to: &[NodeId]) -> Result<Picos, NetlistError> {
        let order = self.topo_order()?;
        let n = self.node_count();
        let mut arrival: Vec<Option<Picos>> = vec![None; n];
        for &f in from {
            arrival[f as usize] = Some(0);
        }
        for gi in order {
            let g = &self.gates[gi];
            let best = g.fanin.iter().filter_map(|&f| arrival[f as usize]).max();
            if let Some(t) = best {
                let t = t + g.delay;
                let slot = &mut arrival[g.id as usize];
                *slot = Some(slot.map_or(t, |old| old.max(t)));
            }
        }
        Ok(to.iter().filter_map(|&o| arrival[o as usize]).max().unwrap_or(0))
    }

    /// Zero-delay evaluation of every node under `inputs`.
    pub fn evaluate(&self, inputs: &[bool]) -> Result<Vec<bool>, NetlistError> {
        let order = self.topo_order()?;
        Ok(self.evaluate_in_order(&order, inputs))
    }

    pub(crate) fn evaluate_in_order(&self, order: &[usize], inputs: &[bool]) -> Vec<bool> {
        let mut values = vec![false; self.node_count()];
        for (p, &v) in self.inputs.iter().zip(inputs) {
            values[p.node as usize] = v;
        }
        let mut buf = [false; 3];
        for &gi in order {
            let g = &self.gates[gi];
            for (k, &f) in g.fanin.iter().enumerate() {
                buf[k] = values[f as usize];
            }
            values[g.id as usize] = g.kind.eval(&buf[..g.fanin.len()]);
        }
        values
    }

    /// Zero-delay evaluation of 64 input vectors at once: bit `j` of
    /// `inputs[i]` is input `i` of vector `j`. Returns one word per output.
    pub fn evaluate_packed(&self, order: &[usize], inputs: &[u64]) -> Vec<u64> {
        let mut values = vec![0u64; self.node_count()];
        for (p, &v) in self.inputs.iter().zip(inputs) {
            values[p.node as usize] = v;
        }
        let mut buf = [0u64; 3];
        for &gi in order {
            let g = &self.gates[gi];
            for (k, &f) in g.fanin.iter().enumerate() {
                buf[k] = values[f as usize];
            }
            values[g.id as usize] = g.kind.eval_packed(&buf[..g.fanin.len()]);
        }
        self.outputs.iter().map(|p| values[p.node as usize]).collect()
    }

    /// Histogram of gate kinds, handy for size reports.
    pub fn kind_histogram(&self) -> HashMap<GateKind, usize> {
        let mut h = HashMap::new();
        for g in &self.gates {
            *h.entry(g.kind).or_insert(0) += 1;
        }
        h
    }
}

/// Free-function form of [`Netlist::static_longest_path`].
pub fn static_longest_path(n: &Netlist) -> Result<Picos, NetlistError> {
    n.static_longest_path()
}
