use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Gate, GateKind, Netlist, NetlistError, NodeId, Port};

pub const NETLIST_HEADER: &str = "netfmt v1";

pub fn format_netlist(n: &Netlist) -> String {
    let mut out = String::new();
    out.push_str(NETLIST_HEADER);
    out.push('\n');
    writeln!(out, "# name={}", n.name).unwrap();
    for p in &n.inputs {
        writeln!(out, "input {} {}", p.node, p.name).unwrap();
    }
    for g in &n.gates {
        write!(out, "gate {} {} {}", g.id, g.kind, g.delay).unwrap();
        for f in &g.fanin {
            write!(out, " {f}").unwrap();
        }
        out.push('\n');
    }
    for p in &n.outputs {
        writeln!(out, "output {} {}", p.node, p.name).unwrap();
    }
    out
}

pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut n = Netlist::default();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| NetlistError::Parse { line, msg };
        let trimmed = raw.trim();
        if let Some(c) = trimmed.strip_prefix('#') {
            if let Some(name) = c.trim().strip_prefix("name=") {
                n.name = name.trim().to_string();
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if !seen_header {
            if trimmed != NETLIST_HEADER {
                return Err(err(format!("expected header `{NETLIST_HEADER}`, found `{trimmed}`")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let id = |s: &str| s.parse::<NodeId>().map_err(|_| err(format!("bad node id `{s}`")));
        match fields[0] {
            "input" | "output" if fields.len() == 3 => {
                let port = Port { node: id(fields[1])?, name: fields[2].to_string() };
                if fields[0] == "input" {
                    n.inputs.push(port);
                } else {
                    n.outputs.push(port);
                }
            }
            "gate" if fields.len() >= 4 => {
                let kind = GateKind::from_name(fields[2]).ok_or_else(|| err(format!("unknown gate kind `{}`", fields[2])))?;
                let delay = fields[3]
                    .parse()
                    .map_err(|_| err(format!("bad delay `{}`", fields[3])))?;
                let fanin = fields[4..].iter().map(|s| id(s)).collect::<Result<Vec<_>, _>>()?;
                n.gates.push(Gate { id: id(fields[1])?, kind, fanin, delay });
            }
            other => return Err(err(format!("malformed `{other}` line"))),
        }
    }
    if !seen_header {
        return Err(NetlistError::Parse { line: 1, msg: "missing header".into() });
    }
    n.validate()?;
    Ok(n)
}

pub fn write_netlist_file(n: &Netlist, path: &Path) -> Result<(), NetlistError> {
    fs::write(path, format_netlist(n)).map_err(|e| NetlistError::Io(e.to_string()))
}

pub fn read_netlist_file(path: &Path) -> Result<Netlist, NetlistError> {
    let text = fs::read_to_string(path).map_err(|e| NetlistError::Io(format!("{}: {e}", path.display())))?;
    parse_netlist(&text)
}
