use crate::isa::{low_mask, Instruction, SubOp};

use super::{Gate, GateDelays, GateKind, Netlist, NetlistError, NodeId, Picos, Port};

/// A wire during construction: either a tied constant or a driven node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Const(bool),
    Node(NodeId),
}

impl Signal {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Signal::Node(n) => Some(n),
            Signal::Const(_) => None,
        }
    }
}

/// Incremental netlist construction with constant folding. Gates are
/// numbered in creation order, so every fanin refers to an earlier node.
pub struct NetlistBuilder {
    name: String,
    delays: GateDelays,
    inputs: Vec<Port>,
    outputs: Vec<Port>,
    gates: Vec<Gate>,
    next_id: NodeId,
    zero: Option<NodeId>,
    one: Option<NodeId>,
}

impl NetlistBuilder {
    pub fn new(name: impl Into<String>, delays: GateDelays) -> Self {
        NetlistBuilder {
            name: name.into(),
            delays,
            inputs: Vec::new(),
            outputs: Vec::new(),
            gates: Vec::new(),
            next_id: 0,
            zero: None,
            one: None,
        }
    }

    pub fn input(&mut self, name: impl Into<String>) -> Signal {
        let id = self.next_id;
        self.next_id += 1;
        self.inputs.push(Port { node: id, name: name.into() });
        Signal::Node(id)
    }

    pub fn inputs(&mut self, prefix: &str, width: u32) -> Vec<Signal> {
        (0..width).map(|i| self.input(format!("{prefix}[{i}]"))).collect()
    }

    fn gate(&mut self, kind: GateKind, fanin: Vec<NodeId>) -> Signal {
        let id = self.next_id;
        self.next_id += 1;
        self.gates.push(Gate { id, kind, fanin, delay: self.delays.of(kind) });
        Signal::Node(id)
    }

    pub fn not(&mut self, a: Signal) -> Signal {
        match a {
            Signal::Const(v) => Signal::Const(!v),
            Signal::Node(n) => self.gate(GateKind::Not, vec![n]),
        }
    }

    pub fn buf(&mut self, a: Signal) -> Signal {
        match a {
            Signal::Const(_) => a,
            Signal::Node(n) => self.gate(GateKind::Buf, vec![n]),
        }
    }

    pub fn and(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Const(false), _) | (_, Signal::Const(false)) => Signal::Const(false),
            (Signal::Const(true), x) | (x, Signal::Const(true)) => x,
            (Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::And, vec![x, y]),
        }
    }

    pub fn or(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Const(true), _) | (_, Signal::Const(true)) => Signal::Const(true),
            (Signal::Const(false), x) | (x, Signal::Const(false)) => x,
            (Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::Or, vec![x, y]),
        }
    }

    pub fn xor(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Const(p), Signal::Const(q)) => Signal::Const(p ^ q),
            (Signal::Const(false), x) | (x, Signal::Const(false)) => x,
            (Signal::Const(true), x) | (x, Signal::Const(true)) => self.not(x),
            (Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::Xor, vec![x, y]),
        }
    }

    pub fn nor(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::Nor, vec![x, y]),
            _ => {
                let o = self.or(a, b);
                self.not(o)
            }
        }
    }

    pub fn nand(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::Nand, vec![x, y]),
            _ => {
                let o = self.and(a, b);
                self.not(o)
            }
        }
    }

    /// `sel ? b : a`
    pub fn mux(&mut self, sel: Signal, a: Signal, b: Signal) -> Signal {
        if a == b {
            return a;
        }
        match (sel, a, b) {
            (Signal::Const(s), _, _) => {
                if s {
                    b
                } else {
                    a
                }
            }
            (s, Signal::Const(false), Signal::Const(true)) => s,
            (s, Signal::Const(true), Signal::Const(false)) => self.not(s),
            (s, Signal::Const(false), x) => self.and(s, x),
            (s, x, Signal::Const(true)) => self.or(s, x),
            (s, x, Signal::Const(false)) => {
                let ns = self.not(s);
                self.and(ns, x)
            }
            (s, Signal::Const(true), x) => {
                let ns = self.not(s);
                self.or(ns, x)
            }
            (Signal::Node(s), Signal::Node(x), Signal::Node(y)) => self.gate(GateKind::Mux2, vec![s, x, y]),
        }
    }

    /// Returns `(sum, carry)`.
    pub fn full_add(&mut self, a: Signal, b: Signal, cin: Signal) -> (Signal, Signal) {
        let p = self.xor(a, b);
        let s = self.xor(p, cin);
        let g = self.and(a, b);
        let t = self.and(p, cin);
        let c = self.or(g, t);
        (s, c)
    }

    /// Materializes a constant as a glitch-free node derived from the first
    /// primary input (`x XOR x` and its complement).
    fn tie(&mut self, v: bool) -> NodeId {
        let x = self.inputs.first().expect("constant outputs need at least one input").node;
        let zero = match self.zero {
            Some(z) => z,
            None => {
                let z = self.gate(GateKind::Xor, vec![x, x]).node().unwrap();
                self.zero = Some(z);
                z
            }
        };
        if !v {
            return zero;
        }
        match self.one {
            Some(o) => o,
            None => {
                let o = self.gate(GateKind::Not, vec![zero]).node().unwrap();
                self.one = Some(o);
                o
            }
        }
    }

    pub fn output(&mut self, s: Signal, name: impl Into<String>) -> NodeId {
        let node = match s {
            Signal::Node(n) => n,
            Signal::Const(v) => self.tie(v),
        };
        self.outputs.push(Port { node, name: name.into() });
        node
    }

    pub fn finish(self) -> Netlist {
        Netlist {
            name: self.name,
            inputs: self.inputs,
            outputs: self.outputs,
            gates: self.gates,
        }
    }
}

fn check_width(width: u32, min: u32, max: u32) -> Result<(), NetlistError> {
    if (min..=max).contains(&width) {
        Ok(())
    } else {
        Err(NetlistError::Width { width, min, max })
    }
}

/// Adder/subtractor: `a + (b ^ sub) + sub`.
fn adder_core(b: &mut NetlistBuilder, x: &[Signal], y: &[Signal], sub: Signal) -> Vec<Signal> {
    let mut carry = sub;
    let mut sum = Vec::with_capacity(x.len());
    for (&xi, &yi) in x.iter().zip(y) {
        let yi = b.xor(yi, sub);
        let (s, c) = b.full_add(xi, yi, carry);
        sum.push(s);
        carry = c;
    }
    sum
}

/// `l1 l0`: 00 AND, 01 OR, 10 XOR, 11 NOR.
fn logic_core(b: &mut NetlistBuilder, x: &[Signal], y: &[Signal], l0: Signal, l1: Signal) -> Vec<Signal> {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let and = b.and(xi, yi);
            let or = b.or(xi, yi);
            let xor = b.xor(xi, yi);
            let nor = b.nor(xi, yi);
            let m0 = b.mux(l0, and, or);
            let m1 = b.mux(l0, xor, nor);
            b.mux(l1, m0, m1)
        })
        .collect()
}

/// Low `width` bits of `x * y`: AND partial products accumulated row by row
/// with ripple-carry adders.
fn multiplier_core(b: &mut NetlistBuilder, x: &[Signal], y: &[Signal]) -> Vec<Signal> {
    let w = x.len();
    let mut acc: Vec<Signal> = (0..w).map(|j| b.and(x[j], y[0])).collect();
    for i in 1..w {
        let mut carry = Signal::Const(false);
        for j in i..w {
            let pp = b.and(x[j - i], y[i]);
            let (s, c) = b.full_add(acc[j], pp, carry);
            acc[j] = s;
            carry = c;
        }
    }
    acc
}

pub fn build_ripple_adder(width: u32, delays: GateDelays) -> Result<Netlist, NetlistError> {
    check_width(width, 2, 64)?;
    let mut b = NetlistBuilder::new(format!("ripple_adder_w{width}"), delays);
    let x = b.inputs("a", width);
    let y = b.inputs("b", width);
    let sub = b.input("sub");
    let sum = adder_core(&mut b, &x, &y, sub);
    for (i, s) in sum.into_iter().enumerate() {
        b.output(s, format!("s[{i}]"));
    }
    Ok(b.finish())
}

pub fn build_logic_unit(width: u32, delays: GateDelays) -> Result<Netlist, NetlistError> {
    check_width(width, 1, 64)?;
    let mut b = NetlistBuilder::new(format!("logic_unit_w{width}"), delays);
    let x = b.inputs("a", width);
    let y = b.inputs("b", width);
    let l0 = b.input("l0");
    let l1 = b.input("l1");
    let r = logic_core(&mut b, &x, &y, l0, l1);
    for (i, s) in r.into_iter().enumerate() {
        b.output(s, format!("y[{i}]"));
    }
    Ok(b.finish())
}

pub fn build_array_multiplier(width: u32, delays: GateDelays) -> Result<Netlist, NetlistError> {
    check_width(width, 2, 32)?;
    let mut b = NetlistBuilder::new(format!("array_multiplier_w{width}"), delays);
    let x = b.inputs("a", width);
    let y = b.inputs("b", width);
    let p = multiplier_core(&mut b, &x, &y);
    for (i, s) in p.into_iter().enumerate() {
        b.output(s, format!("p[{i}]"));
    }
    Ok(b.finish())
}

/// Port map of an execution unit netlist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecLayout {
    pub op1: Vec<NodeId>,
    pub op2: Vec<NodeId>,
    pub sub: NodeId,
    pub l0: NodeId,
    pub l1: NodeId,
    pub u0: NodeId,
    pub u1: NodeId,
    pub out: Vec<NodeId>,
}

/// Adder, logic unit and multiplier behind a shared output mux.
///
/// Function select: `u1 u0` picks the unit (00 adder, 01 logic, 1x
/// multiplier), `sub` drives the adder and `l1 l0` the logic unit. The all-low
/// select word is ADD.
#[derive(Debug, Clone)]
pub struct ExecUnit {
    pub netlist: Netlist,
    pub width: u32,
    pub mul_width: u32,
    pub layout: ExecLayout,
    /// Adder result nodes before the output mux; only known for units built
    /// in-process.
    pub adder_sum: Option<Vec<NodeId>>,
}

pub fn build_exec_unit(width: u32, mul_width: u32, delays: GateDelays) -> Result<ExecUnit, NetlistError> {
    check_width(width, 2, 32)?;
    check_width(mul_width, 2, width)?;
    let mut b = NetlistBuilder::new(format!("exec_w{width}_m{mul_width}"), delays);
    let x = b.inputs("op1", width);
    let y = b.inputs("op2", width);
    let sub = b.input("sub");
    let l0 = b.input("l0");
    let l1 = b.input("l1");
    let u0 = b.input("u0");
    let u1 = b.input("u1");
    let sum = adder_core(&mut b, &x, &y, sub);
    let logic = logic_core(&mut b, &x, &y, l0, l1);
    let mw = mul_width as usize;
    let prod = multiplier_core(&mut b, &x[..mw], &y[..mw]);
    let mut out = Vec::with_capacity(width as usize);
    for i in 0..width as usize {
        let inner = b.mux(u0, sum[i], logic[i]);
        let m = prod.get(i).copied().unwrap_or(Signal::Const(false));
        let r = b.mux(u1, inner, m);
        out.push(b.output(r, format!("out[{i}]")));
    }
    let adder_sum = sum.iter().map(|s| s.node()).collect::<Option<Vec<_>>>();
    let netlist = b.finish();
    let layout = ExecLayout::resolve(&netlist, width)?;
    debug_assert_eq!(layout.out, out);
    Ok(ExecUnit { netlist, width, mul_width, layout, adder_sum })
}

impl ExecLayout {
    fn resolve(n: &Netlist, width: u32) -> Result<Self, NetlistError> {
        let bus = |prefix: &str, out: bool| -> Result<Vec<NodeId>, NetlistError> {
            (0..width)
                .map(|i| {
                    let name = format!("{prefix}[{i}]");
                    if out {
                        n.output_named(&name)
                    } else {
                        n.input_named(&name)
                    }
                })
                .collect()
        };
        Ok(ExecLayout {
            op1: bus("op1", false)?,
            op2: bus("op2", false)?,
            sub: n.input_named("sub")?,
            l0: n.input_named("l0")?,
            l1: n.input_named("l1")?,
            u0: n.input_named("u0")?,
            u1: n.input_named("u1")?,
            out: bus("out", true)?,
        })
    }
}

impl ExecUnit {
    /// Recovers the port map of an execution unit read back from a file.
    /// The netlist name must carry the `exec_w<width>_m<mul_width>` tag.
    pub fn from_netlist(netlist: Netlist) -> Result<Self, NetlistError> {
        let bad = || NetlistError::MissingPort(format!("exec unit tag in name `{}`", netlist.name));
        let rest = netlist.name.strip_prefix("exec_w").ok_or_else(bad)?;
        let (w, m) = rest.split_once("_m").ok_or_else(bad)?;
        let width: u32 = w.parse().map_err(|_| bad())?;
        let mul_width: u32 = m.parse().map_err(|_| bad())?;
        check_width(width, 2, 32)?;
        check_width(mul_width, 2, width)?;
        netlist.topo_order()?;
        let layout = ExecLayout::resolve(&netlist, width)?;
        Ok(ExecUnit { netlist, width, mul_width, layout, adder_sum: None })
    }

    /// Primary-input vector (in `netlist.inputs` order) for an instruction.
    pub fn stimulus(&self, instr: &Instruction) -> Vec<bool> {
        let mut v = vec![false; self.netlist.node_count()];
        let mut set = |node: NodeId, val: bool| v[node as usize] = val;
        for i in 0..self.width as usize {
            set(self.layout.op1[i], (instr.op1 >> i) & 1 == 1);
            set(self.layout.op2[i], (instr.op2 >> i) & 1 == 1);
        }
        let (sub, l0, l1, u0, u1) = match instr.subop {
            SubOp::Add => (false, false, false, false, false),
            SubOp::Sub => (true, false, false, false, false),
            SubOp::And => (false, false, false, true, false),
            SubOp::Or => (false, true, false, true, false),
            SubOp::Xor => (false, false, true, true, false),
            SubOp::Nor => (false, true, true, true, false),
            SubOp::MulLo => (false, false, false, false, true),
        };
        set(self.layout.sub, sub);
        set(self.layout.l0, l0);
        set(self.layout.l1, l1);
        set(self.layout.u0, u0);
        set(self.layout.u1, u1);
        self.netlist.inputs.iter().map(|p| v[p.node as usize]).collect()
    }

    /// Packs output node values (indexed by node id) into a result word.
    pub fn word(&self, values: &[bool]) -> u32 {
        self.layout
            .out
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &n)| acc | ((values[n as usize] as u32) << i))
    }

    pub fn reference(&self, instr: &Instruction) -> u32 {
        instr.evaluate(self.width, self.mul_width) & low_mask(self.width)
    }

    /// Static delay of the carry path: from bit 0 of the first operand
    /// through bit 0's propagate signal, the carry chain and the output mux to
    /// the top result bit.
    pub fn carry_chain_delay(&self) -> Result<Picos, NetlistError> {
        let top = (self.width - 1) as usize;
        let from = [self.layout.op1[0]];
        match &self.adder_sum {
            Some(sum) => {
                let chain = self.netlist.path_delay(&from, &[sum[top]])?;
                let mux = self.netlist.path_delay(&[sum[top]], &[self.layout.out[top]])?;
                Ok(chain + mux)
            }
            None => self.netlist.path_delay(&from, &[self.layout.out[top]]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::OpKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn word_inputs(n: &Netlist, fields: &[(&str, u64)]) -> Vec<bool> {
        n.inputs
            .iter()
            .map(|p| {
                let (bus, idx) = match p.name.split_once('[') {
                    Some((b, rest)) => (b, rest.trim_end_matches(']').parse::<u32>().unwrap()),
                    None => (p.name.as_str(), 0),
                };
                let v = fields.iter().find(|(f, _)| *f == bus).map_or(0, |(_, v)| *v);
                (v >> idx) & 1 == 1
            })
            .collect()
    }

    fn read_bus(n: &Netlist, values: &[bool]) -> u64 {
        n.outputs
            .iter()
            .enumerate()
            .fold(0, |acc, (i, p)| acc | ((values[p.node as usize] as u64) << i))
    }

    #[test]
    fn adder_functional() {
        let n = build_ripple_adder(32, GateDelays::default()).unwrap();
        let v = n.evaluate(&word_inputs(&n, &[("a", 7), ("b", 5)])).unwrap();
        assert_eq!(read_bus(&n, &v), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (a, b): (u32, u32) = (rng.gen(), rng.gen());
            let sub = rng.gen::<bool>();
            let v = n
                .evaluate(&word_inputs(&n, &[("a", a as u64), ("b", b as u64), ("sub", sub as u64)]))
                .unwrap();
            let want = if sub { a.wrapping_sub(b) } else { a.wrapping_add(b) };
            assert_eq!(read_bus(&n, &v) as u32, want);
        }
        let n2 = build_ripple_adder(2, GateDelays::default()).unwrap();
        let v = n2.evaluate(&word_inputs(&n2, &[("a", 1), ("b", 1)])).unwrap();
        assert_eq!(read_bus(&n2, &v), 2);
    }

    #[test]
    fn adder_longest_path_spans_every_carry_stage() {
        // carry stage = AND + OR; the path enters through the subtract XOR and
        // the bit-0 propagate XOR and leaves through the top sum XOR.
        let d = GateDelays::default();
        let n = build_ripple_adder(32, d).unwrap();
        // sub -> b'0 -> p0 -> AND(p0,c0) -> OR c1, then 30 more AND+OR stages
        // up to c31, then s31.
        let expected = 2 * d.xor + (d.and + d.or) + 30 * (d.and + d.or) + d.xor;
        let oracle = longest_path_brute_force(&n);
        assert_eq!(n.static_longest_path().unwrap(), oracle);
        assert_eq!(oracle, expected);
        assert!(build_ripple_adder(1, d).is_err());
        assert!(build_ripple_adder(65, d).is_err());
    }

    /// Depth-first enumeration of every input-to-output path.
    fn longest_path_brute_force(n: &Netlist) -> Picos {
        let count = n.node_count();
        let mut driver: Vec<Option<&Gate>> = vec![None; count];
        for g in &n.gates {
            driver[g.id as usize] = Some(g);
        }
        let mut memo: Vec<Option<Picos>> = vec![None; count];
        fn walk(node: NodeId, driver: &[Option<&Gate>], memo: &mut [Option<Picos>]) -> Picos {
            if let Some(v) = memo[node as usize] {
                return v;
            }
            let v = match driver[node as usize] {
                None => 0,
                Some(g) => g.delay + g.fanin.iter().map(|&f| walk(f, driver, memo)).max().unwrap(),
            };
            memo[node as usize] = Some(v);
            v
        }
        n.outputs.iter().map(|p| walk(p.node, &driver, &mut memo)).max().unwrap()
    }

    #[test]
    fn logic_unit_functional_and_shallow() {
        let n = build_logic_unit(32, GateDelays::default()).unwrap();
        let v = n
            .evaluate(&word_inputs(&n, &[("a", 0xF0F0_F0F0), ("b", 0x0F0F_0F0F)]))
            .unwrap();
        assert_eq!(read_bus(&n, &v), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x: u32 = rng.gen();
            let v = n
                .evaluate(&word_inputs(&n, &[("a", x as u64), ("b", x as u64), ("l1", 1)]))
                .unwrap();
            assert_eq!(read_bus(&n, &v), 0);
        }
        let lp = n.static_longest_path().unwrap();
        let d = GateDelays::default();
        assert_eq!(lp, d.xor + 2 * d.mux2);
        assert_eq!(build_logic_unit(4, d).unwrap().static_longest_path().unwrap(), lp);
        assert!(lp < build_ripple_adder(32, d).unwrap().static_longest_path().unwrap());
    }

    #[test]
    fn multiplier_functional_and_deep() {
        let d = GateDelays::default();
        let n = build_array_multiplier(16, d).unwrap();
        let v = n.evaluate(&word_inputs(&n, &[("a", 3), ("b", 5)])).unwrap();
        assert_eq!(read_bus(&n, &v), 15);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let (a, b) = (rng.gen::<u16>(), rng.gen::<u16>());
            let v = n.evaluate(&word_inputs(&n, &[("a", a as u64), ("b", b as u64)])).unwrap();
            assert_eq!(read_bus(&n, &v) as u16, a.wrapping_mul(b));
            let v = n.evaluate(&word_inputs(&n, &[("a", a as u64), ("b", 0)])).unwrap();
            assert_eq!(read_bus(&n, &v), 0);
        }
        for w in [8, 16, 32] {
            let m = build_array_multiplier(w, d).unwrap().static_longest_path().unwrap();
            let a = build_ripple_adder(w, d).unwrap().static_longest_path().unwrap();
            assert!(m > a, "width {w}: multiplier {m} <= adder {a}");
        }
    }

    #[test]
    fn exec_unit_selects_function() {
        let eu = build_exec_unit(32, 16, GateDelays::default()).unwrap();
        let order = eu.netlist.topo_order().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let kind = OpKind::ALL[rng.gen_range(0..4)];
            let subops = kind.subops();
            let i = Instruction::new(kind, subops[rng.gen_range(0..subops.len())], rng.gen(), rng.gen());
            let v = eu.netlist.evaluate_in_order(&order, &eu.stimulus(&i));
            assert_eq!(eu.word(&v), eu.reference(&i), "{i:?}");
        }
        let add = Instruction::new(OpKind::Arith, SubOp::Add, 1, 2);
        let v = eu.netlist.evaluate_in_order(&order, &eu.stimulus(&add));
        assert_eq!(eu.word(&v), 3);
    }

    #[test]
    fn exec_unit_longest_path_is_multiplier_plus_mux() {
        let d = GateDelays::default();
        let eu = build_exec_unit(32, 16, d).unwrap();
        let mult = build_array_multiplier(16, d).unwrap().static_longest_path().unwrap();
        assert_eq!(eu.netlist.static_longest_path().unwrap(), mult + d.mux2);
    }

    #[test]
    fn exec_unit_reloads_from_name() {
        let eu = build_exec_unit(8, 4, GateDelays::default()).unwrap();
        let again = ExecUnit::from_netlist(eu.netlist.clone()).unwrap();
        assert_eq!(again.layout, eu.layout);
        assert_eq!((again.width, again.mul_width), (8, 4));
        let mut bad = eu.netlist.clone();
        bad.name = "something".into();
        assert!(ExecUnit::from_netlist(bad).is_err());
    }

    #[test]
    fn constant_outputs_are_materialized() {
        let mut b = NetlistBuilder::new("k", GateDelays::default());
        let x = b.input("x");
        let one = b.or(x, Signal::Const(true));
        b.output(one, "hi");
        b.output(Signal::Const(false), "lo");
        let n = b.finish();
        for x in [false, true] {
            let v = n.evaluate(&[x]).unwrap();
            assert!(v[n.outputs[0].node as usize]);
            assert!(!v[n.outputs[1].node as usize]);
        }
    }
}
