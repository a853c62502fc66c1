//! Line-oriented text format for network instances and topologies.
//!
//! ```text
//! # comments and blank lines are ignored
//! rho 1e-12
//! eps_proc 5e-8
//! data_bits_min 500
//! data_bits_max 1000
//! 0 0 0 inf 1
//! 1 412.5 -80.25 1 1
//! 2 -10 733 1 0
//! ```
//!
//! The four header keys must each appear exactly once, in any order, before
//! the first node line. A node line is `id x y energy_joules active` with
//! `active` either `1` or `0`. Ids run from 0 to N-1 with no gaps or repeats,
//! in any order. The gateway (id 0) must carry energy `inf`; every other number
//! must be finite.
//!
//! A topology file is an instance file whose node lines carry a sixth column,
//! the parent id, written `-` for the gateway and inactive nodes.

use std::fmt::Write as _;

use thiserror::Error;

use super::{EnergyParams, ModelError, NetworkSpec, NodeId, NodeSpec, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing header key `{0}`")]
    MissingHeader(&'static str),
    #[error("node {0} is missing")]
    MissingNode(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const HEADER_KEYS: [&str; 4] = ["rho", "eps_proc", "data_bits_min", "data_bits_max"];

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

fn parse_finite(tok: &str, line: usize, what: &str) -> Result<f64, ParseError> {
    let v: f64 = tok.parse().map_err(|_| syntax(line, format!("{what}: `{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("{what}: `{tok}` is not finite")));
    }
    Ok(v)
}

struct RawNode {
    spec: NodeSpec,
    parent: Option<NodeId>,
}

fn parse_lines(text: &str, with_parent: bool) -> Result<(NetworkSpec, Vec<Option<NodeId>>), ParseError> {
    let mut header: [Option<f64>; 4] = [None; 4];
    let mut bits: [Option<u32>; 2] = [None; 2];
    let mut nodes: Vec<Option<RawNode>> = Vec::new();
    let mut seen_node = false;
    let columns = if with_parent { 6 } else { 5 };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if let Some(k) = HEADER_KEYS.iter().position(|&h| h == toks[0]) {
            if seen_node {
                return Err(syntax(line, "header keys must precede node lines"));
            }
            if toks.len() != 2 {
                return Err(syntax(line, format!("`{}` takes exactly one value", toks[0])));
            }
            if header[k].is_some() || (k >= 2 && bits[k - 2].is_some()) {
                return Err(syntax(line, format!("duplicate header `{}`", toks[0])));
            }
            if k >= 2 {
                let v: u32 = toks[1]
                    .parse()
                    .map_err(|_| syntax(line, format!("`{}` must be a non-negative integer", toks[0])))?;
                bits[k - 2] = Some(v);
            } else {
                header[k] = Some(parse_finite(toks[1], line, toks[0])?);
            }
            continue;
        }
        seen_node = true;
        if toks.len() != columns {
            return Err(syntax(line, format!("expected {columns} columns, found {}", toks.len())));
        }
        let id: usize = toks[0].parse().map_err(|_| syntax(line, format!("bad node id `{}`", toks[0])))?;
        if id > 1_000_000 {
            return Err(syntax(line, format!("node id {id} is too large")));
        }
        let x = parse_finite(toks[1], line, "x")?;
        let y = parse_finite(toks[2], line, "y")?;
        let energy = if id == 0 {
            let v: f64 = toks[3].parse().map_err(|_| syntax(line, "gateway energy must be `inf`"))?;
            if v != f64::INFINITY {
                return Err(syntax(line, "gateway energy must be `inf`"));
            }
            v
        } else {
            parse_finite(toks[3], line, "energy")?
        };
        let active = match toks[4] {
            "1" => true,
            "0" => false,
            other => return Err(syntax(line, format!("active flag must be 0 or 1, got `{other}`"))),
        };
        let parent = if with_parent {
            match toks[5] {
                "-" => None,
                p => Some(NodeId(p.parse().map_err(|_| syntax(line, format!("bad parent `{p}`")))?)),
            }
        } else {
            None
        };
        if nodes.len() <= id {
            nodes.resize_with(id + 1, || None);
        }
        if nodes[id].is_some() {
            return Err(syntax(line, format!("duplicate node id {id}")));
        }
        nodes[id] = Some(RawNode { spec: NodeSpec { position: [x, y], energy, active }, parent });
    }

    for (k, key) in HEADER_KEYS.iter().enumerate().take(2) {
        if header[k].is_none() {
            return Err(ParseError::MissingHeader(key));
        }
    }
    for (k, key) in HEADER_KEYS.iter().enumerate().skip(2) {
        if bits[k - 2].is_none() {
            return Err(ParseError::MissingHeader(key));
        }
    }
    let params = EnergyParams {
        rho: header[0].unwrap(),
        eps_proc: header[1].unwrap(),
        data_bits_min: bits[0].unwrap(),
        data_bits_max: bits[1].unwrap(),
    };
    let mut specs = Vec::with_capacity(nodes.len());
    let mut parents = Vec::with_capacity(nodes.len());
    for (i, n) in nodes.into_iter().enumerate() {
        let n = n.ok_or(ParseError::MissingNode(i))?;
        specs.push(n.spec);
        parents.push(n.parent);
    }
    if specs.is_empty() {
        return Err(ParseError::MissingNode(0));
    }
    Ok((NetworkSpec::new(specs, params)?, parents))
}

pub fn parse_instance(text: &str) -> Result<NetworkSpec, ParseError> {
    parse_lines(text, false).map(|(spec, _)| spec)
}

/// Parses a topology file; the topology is validated against the embedded instance.
pub fn parse_topology_file(text: &str) -> Result<(NetworkSpec, Topology), ParseError> {
    let (spec, parents) = parse_lines(text, true)?;
    let topology = Topology::from_parents(parents);
    topology.validate(&spec)?;
    Ok((spec, topology))
}

fn write_header(spec: &NetworkSpec, out: &mut String) {
    let p = spec.params();
    let _ = writeln!(out, "rho {:e}", p.rho);
    let _ = writeln!(out, "eps_proc {:e}", p.eps_proc);
    let _ = writeln!(out, "data_bits_min {}", p.data_bits_min);
    let _ = writeln!(out, "data_bits_max {}", p.data_bits_max);
}

fn write_node(spec: &NetworkSpec, i: usize, out: &mut String) {
    let id = NodeId(i);
    let [x, y] = spec.position(id);
    let energy = if i == 0 { "inf".to_string() } else { format!("{}", spec.initial_energy(id)) };
    let _ = write!(out, "{i} {x} {y} {energy} {}", u8::from(spec.is_active(id)));
}

pub fn write_instance(spec: &NetworkSpec) -> String {
    let mut out = String::from("# id x y energy_joules active\n");
    write_header(spec, &mut out);
    for i in 0..spec.node_count() {
        write_node(spec, i, &mut out);
        out.push('\n');
    }
    out
}

pub fn write_topology_file(spec: &NetworkSpec, topology: &Topology) -> String {
    let mut out = String::from("# id x y energy_joules active parent\n");
    write_header(spec, &mut out);
    for i in 0..spec.node_count() {
        write_node(spec, i, &mut out);
        match topology.parents().get(i).copied().flatten() {
            Some(p) => {
                let _ = writeln!(out, " {p}");
            }
            None => out.push_str(" -\n"),
        }
    }
    out
}

/// SHA-256 of the instance text, as lowercase hex. Identifies a network in checkpoints.
pub fn spec_digest(spec: &NetworkSpec) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(write_instance(spec).as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_spec, random_topology_for};
    use proptest::prelude::*;

    const SAMPLE: &str = "\
# sample
rho 1e-12
eps_proc 5e-8
data_bits_min 500
data_bits_max 1000
0 0 0 inf 1
2 -10 733 1 0
1 412.5 -80.25 1 1
";

    #[test]
    fn parses_sample() {
        let spec = parse_instance(SAMPLE).unwrap();
        assert_eq!(spec.node_count(), 3);
        assert_eq!(spec.position(NodeId(1)), [412.5, -80.25]);
        assert!(!spec.is_active(NodeId(2)));
        assert_eq!(spec.params(), &EnergyParams::default());
        assert_eq!(spec.initial_energy(NodeId(0)), f64::INFINITY);
    }

    #[test]
    fn rejects_duplicates_and_non_finite() {
        let dup = SAMPLE.replace("2 -10 733 1 0", "1 -10 733 1 0");
        assert!(matches!(parse_instance(&dup), Err(ParseError::Syntax { line: 8, .. })));
        let nan = SAMPLE.replace("412.5", "NaN");
        assert!(matches!(parse_instance(&nan), Err(ParseError::Syntax { .. })));
        let inf = SAMPLE.replace("-10 733 1 0", "-10 733 inf 0");
        assert!(matches!(parse_instance(&inf), Err(ParseError::Syntax { .. })));
        let rho = SAMPLE.replace("rho 1e-12", "rho inf");
        assert!(matches!(parse_instance(&rho), Err(ParseError::Syntax { line: 2, .. })));
        let dup_header = SAMPLE.replace("eps_proc 5e-8", "eps_proc 5e-8\nrho 2e-12");
        assert!(matches!(parse_instance(&dup_header), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn rejects_missing_pieces() {
        let no_rho = SAMPLE.replace("rho 1e-12\n", "");
        assert_eq!(parse_instance(&no_rho), Err(ParseError::MissingHeader("rho")));
        let gap = SAMPLE.replace("1 412.5 -80.25 1 1\n", "");
        assert_eq!(parse_instance(&gap), Err(ParseError::MissingNode(1)));
        let short = SAMPLE.replace("1 412.5 -80.25 1 1", "1 412.5 -80.25 1");
        assert!(matches!(parse_instance(&short), Err(ParseError::Syntax { .. })));
        let late_header = format!("{SAMPLE}rho 1e-12\n");
        assert!(matches!(parse_instance(&late_header), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn topology_file_is_validated() {
        let text = "rho 1e-12\neps_proc 5e-8\ndata_bits_min 500\ndata_bits_max 1000\n\
                    0 0 0 inf 1 -\n1 10 0 1 1 2\n2 20 0 1 1 1\n";
        assert!(matches!(parse_topology_file(text), Err(ParseError::Model(ModelError::Cycle(_)))));
        let ok = text.replace("1 10 0 1 1 2", "1 10 0 1 1 0");
        let (spec, topo) = parse_topology_file(&ok).unwrap();
        assert_eq!(topo.parent(NodeId(2)), Some(NodeId(1)));
        assert_eq!(spec.node_count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn files_round_trip(seed in 0u64..100_000, n in 2usize..30, drop in 0usize..30) {
            let mut spec = random_spec(n, seed);
            if drop > 0 && drop < n {
                spec = spec.with_active(&[NodeId(drop)], false).unwrap();
            }
            let back = parse_instance(&write_instance(&spec)).unwrap();
            prop_assert_eq!(&back, &spec);
            let topo = random_topology_for(&spec, seed + 1);
            let (spec2, topo2) = parse_topology_file(&write_topology_file(&spec, &topo)).unwrap();
            prop_assert_eq!(spec2, spec);
            prop_assert_eq!(topo2, topo);
        }
    }
}
