//! Radial network representation, MATPOWER case parsing and the linear
//! DistFlow sensitivity matrices.
//!
//! Nodes are numbered `0..=node_count` with the substation at 0. Each
//! non-root node `k` has exactly one incoming edge, and [`Network::edges`] is
//! kept sorted so that edge `k - 1` feeds node `k`. Per-node vectors (loads,
//! voltages, injections) are indexed by `k - 1`.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Per-unit resistance.
    pub r: f64,
    /// Per-unit reactance.
    pub x: f64,
}

/// Per-unit real and reactive load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Number of non-root nodes.
    pub node_count: usize,
    pub edges: Vec<Edge>,
    /// Substation voltage magnitude (p.u.).
    pub v0: f64,
    pub nominal_load: Vec<Load>,
}

impl Network {
    /// Validates the tree invariants and normalises edge order.
    pub fn new(node_count: usize, mut edges: Vec<Edge>, v0: f64, nominal_load: Vec<Load>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Topology("network has no non-root nodes".into()));
        }
        crate::error::check_len("nominal_load", node_count, nominal_load.len())?;
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(Error::argument(format!("v0 must be positive, got {v0}")));
        }
        if edges.len() != node_count {
            return Err(Error::Topology(format!(
                "{} edges for {} non-root nodes; a radial network needs exactly one edge per node",
                edges.len(),
                node_count
            )));
        }
        let mut incoming = vec![false; node_count + 1];
        for e in &edges {
            if e.from > node_count || e.to > node_count || e.to == 0 || e.from == e.to {
                return Err(Error::Topology(format!("invalid edge {} -> {}", e.from, e.to)));
            }
            if !(e.r >= 0.0 && e.x >= 0.0 && e.r.is_finite() && e.x.is_finite()) {
                return Err(Error::argument(format!(
                    "edge {} -> {} has negative or non-finite impedance",
                    e.from, e.to
                )));
            }
            if core::mem::replace(&mut incoming[e.to], true) {
                return Err(Error::Topology(format!("node {} has two incoming edges", e.to)));
            }
        }
        edges.sort_by_key(|e| e.to);
        let net = Network {
            node_count,
            edges,
            v0,
            nominal_load,
        };
        // Every node must reach the root by following parents.
        for k in 1..=node_count {
            let mut cur = k;
            let mut hops = 0;
            while cur != 0 {
                cur = net.parent(cur);
                hops += 1;
                if hops > node_count {
                    return Err(Error::Topology(format!("node {k} is on a cycle or cut off from the substation")));
                }
            }
        }
        Ok(net)
    }

    pub fn parent(&self, node: usize) -> usize {
        self.edges[node - 1].from
    }

    /// Edge indices on the path from the root to `node`, root side first.
    pub fn root_path(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = node;
        while cur != 0 {
            path.push(cur - 1);
            cur = self.parent(cur);
        }
        path.reverse();
        path
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.from == node).map(|e| e.to)
    }

    pub fn is_lossless(&self) -> bool {
        self.edges.iter().all(|e| e.r == 0.0 && e.x == 0.0)
    }

    /// Copy with every line impedance set to zero (uniform pricing).
    pub fn zero_impedance(&self) -> Network {
        let mut net = self.clone();
        for e in &mut net.edges {
            e.r = 0.0;
            e.x = 0.0;
        }
        net
    }

    /// Nodes `1..=node_count` with a nonzero nominal load.
    pub fn loaded_nodes(&self) -> Vec<usize> {
        (1..=self.node_count)
            .filter(|&k| {
                let l = self.nominal_load[k - 1];
                l.p != 0.0 || l.q != 0.0
            })
            .collect()
    }
}

/// Multiply every nominal load by `factor`.
pub fn scale_loads(net: &Network, factor: f64) -> Result<Network> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::argument(format!("load scale factor must be positive, got {factor}")));
    }
    let mut out = net.clone();
    for l in &mut out.nominal_load {
        l.p *= factor;
        l.q *= factor;
    }
    Ok(out)
}

/// Linear DistFlow sensitivities: `P = H p`, `Q = H q`, `v = v0 + R p + X q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivities {
    /// Edge-to-downstream-node incidence, `|L| × |N|`.
    pub h: Matrix,
    pub r_mat: Matrix,
    pub x_mat: Matrix,
    /// Per-edge resistance, indexed like the rows of `h`.
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    /// Per node `k`: (‖R e_k‖², ‖X e_k‖², ⟨R e_k, X e_k⟩).
    pub(crate) column_grams: Vec<[f64; 3]>,
}

impl Sensitivities {
    pub fn node_count(&self) -> usize {
        self.h.cols()
    }
}

pub fn build_sensitivities(net: &Network) -> Sensitivities {
    let n = net.node_count;
    let mut h = Matrix::zeros(n, n);
    for k in 1..=n {
        for e in net.root_path(k) {
            h.set(e, k - 1, 1.0);
        }
    }
    let r: Vec<f64> = net.edges.iter().map(|e| e.r).collect();
    let x: Vec<f64> = net.edges.iter().map(|e| e.x).collect();
    // R_ij = -Σ_e H_ei r_e H_ej, i.e. minus the resistance of the shared root path.
    let mut r_mat = Matrix::zeros(n, n);
    let mut x_mat = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (mut sr, mut sx) = (0.0, 0.0);
            for e in 0..n {
                if h.get(e, i) != 0.0 && h.get(e, j) != 0.0 {
                    sr += r[e];
                    sx += x[e];
                }
            }
            r_mat.set(i, j, -sr);
            r_mat.set(j, i, -sr);
            x_mat.set(i, j, -sx);
            x_mat.set(j, i, -sx);
        }
    }
    let column_grams = (0..n)
        .map(|k| {
            let (mut rr, mut xx, mut rx) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let (a, b) = (r_mat.get(i, k), x_mat.get(i, k));
                rr += a * a;
                xx += b * b;
                rx += a * b;
            }
            [rr, xx, rx]
        })
        .collect();
    Sensitivities {
        h,
        r_mat,
        x_mat,
        r,
        x,
        column_grams,
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// One numeric row of a MATPOWER matrix together with its source line.
struct Row {
    line: usize,
    values: Vec<f64>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_matrix(lines: &[&str], start: usize, name: &str) -> Result<(Vec<Row>, usize)> {
    // `start` indexes the line holding `mpc.<name> = [`.
    let head = strip_comment(lines[start]);
    let open = head
        .find('[')
        .ok_or_else(|| parse_err(start + 1, format!("expected '[' after mpc.{name}")))?;
    let mut rows = Vec::new();
    let mut i = start;
    let mut text = &head[open + 1..];
    loop {
        let (body, closed) = match text.find(']') {
            Some(j) => (&text[..j], true),
            None => (text, false),
        };
        for chunk in body.split(';') {
            let fields: Vec<&str> = chunk
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if fields.is_empty() {
                continue;
            }
            let values = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(i + 1, format!("mpc.{name}: cannot parse number '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row { line: i + 1, values });
        }
        if closed {
            return Ok((rows, i));
        }
        i += 1;
        if i >= lines.len() {
            return Err(parse_err(start + 1, format!("mpc.{name} is not terminated by ']'")));
        }
        text = strip_comment(lines[i]);
    }
}

fn assignment_target(line: &str) -> Option<&str> {
    let line = strip_comment(line).trim_start();
    let rest = line.strip_prefix("mpc.")?;
    let eq = rest.find('=')?;
    Some(rest[..eq].trim())
}

/// Parse a MATPOWER case file. Only `baseMVA`, `bus` and `branch` are read.
pub fn parse_case(text: &str) -> Result<Network> {
    let lines: Vec<&str> = text.lines().collect();
    let mut base_mva: Option<f64> = None;
    let mut bus_rows: Option<Vec<Row>> = None;
    let mut branch_rows: Option<Vec<Row>> = None;
    let mut i = 0;
    while i < lines.len() {
        match assignment_target(lines[i]) {
            Some("baseMVA") => {
                let body = strip_comment(lines[i]);
                let value = body[body.find('=').unwrap() + 1..].trim().trim_end_matches(';').trim();
                base_mva = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| parse_err(i + 1, format!("cannot parse baseMVA '{value}'")))?,
                );
            }
            Some(name @ ("bus" | "branch")) => {
                let (rows, end) = parse_matrix(&lines, i, name)?;
                if name == "bus" {
                    bus_rows = Some(rows);
                } else {
                    branch_rows = Some(rows);
                }
                i = end;
            }
            _ => {}
        }
        i += 1;
    }
    let base_mva = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(parse_err(0, "baseMVA must be positive"));
    }
    let bus_rows = bus_rows.ok_or_else(|| parse_err(0, "missing mpc.bus section"))?;
    let branch_rows = branch_rows.ok_or_else(|| parse_err(0, "missing mpc.branch section"))?;

    struct Bus {
        id: i64,
        line: usize,
        pd: f64,
        qd: f64,
        vm: f64,
    }
    let mut buses = Vec::new();
    let mut root: Option<usize> = None;
    for row in &bus_rows {
        if row.values.len() < 8 {
            return Err(parse_err(row.line, "bus row needs at least 8 columns"));
        }
        let kind = row.values[1] as i64;
        if kind == 4 {
            continue; // isolated
        }
        if kind == 3 {
            if let Some(prev) = root {
                let prev: &Bus = &buses[prev];
                return Err(parse_err(
                    row.line,
                    format!("second reference bus (bus {} already marked on line {})", row.values[0], prev.line),
                ));
            }
            root = Some(buses.len());
        }
        buses.push(Bus {
            id: row.values[0] as i64,
            line: row.line,
            pd: row.values[2],
            qd: row.values[3],
            vm: row.values[7],
        });
    }
    let root = root.ok_or_else(|| Error::Topology("no reference (type 3) bus: substation missing".into()))?;
    let root_id = buses[root].id;

    // Sorted external ids, reference bus forced to index 0.
    let mut ids: Vec<i64> = buses.iter().map(|b| b.id).filter(|&id| id != root_id).collect();
    ids.sort_unstable();
    let mut index: BTreeMap<i64, usize> = BTreeMap::new();
    index.insert(root_id, 0);
    for (k, &id) in ids.iter().enumerate() {
        if index.insert(id, k + 1).is_some() {
            return Err(Error::Topology(format!("duplicate bus number {id}")));
        }
    }
    let n = ids.len();

    // (neighbour, r, x, branch index); branch index doubles as a source-line lookup
    let mut adjacency: Vec<Vec<(usize, f64, f64, usize)>> = vec![Vec::new(); n + 1];
    let mut branch_lines: Vec<usize> = Vec::new();
    for row in &branch_rows {
        if row.values.len() < 4 {
            return Err(parse_err(row.line, "branch row needs at least 4 columns"));
        }
        if row.values.get(10).is_some_and(|&s| s == 0.0) {
            continue;
        }
        let lookup = |v: f64| {
            index
                .get(&(v as i64))
                .copied()
                .ok_or_else(|| parse_err(row.line, format!("branch references unknown bus {v}")))
        };
        let (a, b) = (lookup(row.values[0])?, lookup(row.values[1])?);
        if a == b {
            return Err(Error::Topology(format!("line {}: branch is a self-loop", row.line)));
        }
        let (r, x) = (row.values[2], row.values[3]);
        let id = branch_lines.len();
        branch_lines.push(row.line);
        adjacency[a].push((b, r, x, id));
        adjacency[b].push((a, r, x, id));
    }

    // Breadth-first orientation away from the substation.
    let mut parent_edge: Vec<Option<Edge>> = vec![None; n + 1];
    let mut seen = vec![false; n + 1];
    let mut used = vec![false; branch_lines.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, r, x, id) in &adjacency[u] {
            if core::mem::replace(&mut used[id], true) {
                continue;
            }
            if seen[v] {
                return Err(Error::Topology(format!("line {}: branch closes a cycle", branch_lines[id])));
            }
            seen[v] = true;
            parent_edge[v] = Some(Edge { from: u, to: v, r, x });
            queue.push_back(v);
        }
    }
    if let Some(k) = (1..=n).find(|&k| !seen[k]) {
        let bus = &buses.iter().find(|b| b.id == ids[k - 1]).unwrap();
        return Err(Error::Topology(format!(
            "bus {} (line {}) is not connected to the substation",
            bus.id, bus.line
        )));
    }
    if let Some(id) = used.iter().position(|&u| !u) {
        return Err(Error::Topology(format!(
            "line {}: branch is not reachable from the substation",
            branch_lines[id]
        )));
    }

    let mut nominal_load = vec![Load::default(); n];
    for b in &buses {
        let k = index[&b.id];
        if k > 0 {
            nominal_load[k - 1] = Load {
                p: b.pd / base_mva,
                q: b.qd / base_mva,
            };
        }
    }
    let edges = parent_edge.into_iter().flatten().collect();
    Network::new(n, edges, buses[root].vm, nominal_load)
}

/// Write the network as a minimal MATPOWER case with `baseMVA = 1`.
///
/// The substation becomes bus 1 and node `k` becomes bus `k + 1`, so the
/// sorted renumbering in [`parse_case`] reproduces the same indices.
pub fn serialize_case(net: &Network) -> String {
    let mut s = String::new();
    s.push_str("function mpc = case_export\n");
    s.push_str("mpc.version = '2';\n");
    s.push_str("mpc.baseMVA = 1;\n\n");
    s.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n");
    s.push_str("mpc.bus = [\n");
    let _ = writeln!(s, "\t1\t3\t0\t0\t0\t0\t1\t{:?}\t0\t0\t1\t1.1\t0.9;", net.v0);
    for (k, l) in net.nominal_load.iter().enumerate() {
        let _ = writeln!(s, "\t{}\t1\t{:?}\t{:?}\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;", k + 2, l.p, l.q);
    }
    s.push_str("];\n\n");
    s.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n");
    s.push_str("mpc.branch = [\n");
    for e in &net.edges {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t0\t0\t0\t0\t0\t0\t1\t-360\t360;",
            e.from + 1,
            e.to + 1,
            e.r,
            e.x
        );
    }
    s.push_str("];\n");
    s
}

impl core::fmt::Display for Network {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "{} non-root nodes, v0 = {}", self.node_count, self.v0)?;
        for e in &self.edges {
            let l = self.nominal_load[e.to - 1];
            writeln!(
                f,
                "  {:>3} -> {:<3} r={:<10} x={:<10} load=({}, {})",
                e.from, e.to, e.r, e.x, l.p, l.q
            )?;
        }
        Ok(())
    }
}

impl Network {
    pub fn summary(&self) -> String {
        self.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const TWO_BUS: &str = "\
function mpc = two
mpc.baseMVA = 10;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 12.5 1 1.1 0.9;
  2 1 3 1 0 0 1 1 0 12.5 1 1.1 0.9;
];
mpc.branch = [
  1 2 0.1 0.2 0 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn two_bus_case_converts_to_per_unit() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.node_count, 1);
        assert_eq!(net.edges, vec![Edge { from: 0, to: 1, r: 0.1, x: 0.2 }]);
        assert!((net.nominal_load[0].p - 0.3).abs() < 1e-15);
        assert!((net.nominal_load[0].q - 0.1).abs() < 1e-15);
    }

    #[test]
    fn case18_has_seventeen_branches_and_fifteen_load_buses() {
        let net = parse_case(crate::CASE18).unwrap();
        assert_eq!(net.node_count, 17);
        assert_eq!(net.edges.len(), 17);
        assert_eq!(net.loaded_nodes().len(), 15);
        assert_eq!(net.v0, 1.0);
        // Bus 5 carries 3 MW + j2.26 Mvar on a 10 MVA base.
        assert!((net.nominal_load[4].p - 0.3).abs() < 1e-12);
    }

    #[test]
    fn cycle_is_rejected() {
        let text = TWO_BUS.replace(
            "  1 2 0.1 0.2 0 0 0 0 0 0 1 -360 360;\n",
            "  1 2 0.1 0.2 0 0 0 0 0 0 1 -360 360;\n  2 1 0.1 0.2 0 0 0 0 0 0 1 -360 360;\n",
        );
        assert!(matches!(parse_case(&text), Err(Error::Topology(_))));
    }

    #[test]
    fn disconnected_and_missing_substation_are_rejected() {
        let text = TWO_BUS.replace("  2 1 3 1", "  2 1 3 1 0 0 1 1 0 12.5 1 1.1 0.9;\n  7 1 3 1");
        match parse_case(&text) {
            Err(Error::Topology(msg)) => assert!(msg.contains("bus 7"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let text = TWO_BUS.replace("  1 3 0", "  1 1 0");
        assert!(matches!(parse_case(&text), Err(Error::Topology(_))));
    }

    #[test]
    fn malformed_number_names_line() {
        let text = TWO_BUS.replace("0.1 0.2", "0.1 zz");
        match parse_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scale_loads_multiplies_and_rejects_nonpositive() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(scale_loads(&net, 1.0).unwrap(), net);
        let tripled = scale_loads(&net, 3.0).unwrap();
        assert!((tripled.nominal_load[0].p - 0.9).abs() < 1e-15);
        assert!((tripled.nominal_load[0].q - 0.3).abs() < 1e-15);
        assert_eq!(tripled.edges, net.edges);
        assert!(scale_loads(&net, 0.0).is_err());
        assert!(scale_loads(&net, -2.0).is_err());
    }

    #[test]
    fn single_line_sensitivities() {
        let net = parse_case(TWO_BUS).unwrap();
        let s = build_sensitivities(&net);
        assert_eq!(s.h.as_slice(), &[1.0]);
        assert_eq!(s.r_mat.as_slice(), &[-0.1]);
        assert_eq!(s.x_mat.as_slice(), &[-0.2]);
    }

    #[test]
    fn two_series_lines() {
        let net = Network::new(
            2,
            vec![
                Edge { from: 1, to: 2, r: 0.2, x: 0.0 },
                Edge { from: 0, to: 1, r: 0.1, x: 0.0 },
            ],
            1.0,
            vec![Load::default(); 2],
        )
        .unwrap();
        let s = build_sensitivities(&net);
        assert_eq!(s.h.as_slice(), &[1.0, 1.0, 0.0, 1.0]);
        let r = s.r_mat.as_slice();
        let expect = [-0.1, -0.1, -0.1, -0.3];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn case18_leaf_column_sums_equal_bfs_depth() {
        let net = parse_case(crate::CASE18).unwrap();
        let s = build_sensitivities(&net);
        // independent oracle: breadth-first depths from the child lists
        let mut depth = vec![0usize; net.node_count + 1];
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in net.children(u) {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
        for k in 1..=net.node_count {
            let col: f64 = (0..net.node_count).map(|e| s.h.get(e, k - 1)).sum();
            assert_eq!(col as usize, depth[k]);
        }
        assert!(s.r_mat.is_symmetric() && s.x_mat.is_symmetric());
    }

    #[test]
    fn serialize_round_trip() {
        let net = scale_loads(&parse_case(crate::CASE18).unwrap(), 3.0).unwrap();
        assert_eq!(parse_case(&serialize_case(&net)).unwrap(), net);
    }

    #[test]
    fn new_rejects_two_parents() {
        let err = Network::new(
            2,
            vec![Edge { from: 0, to: 1, r: 0.1, x: 0.1 }, Edge { from: 0, to: 1, r: 0.1, x: 0.1 }],
            1.0,
            vec![Load::default(); 2],
        );
        assert!(matches!(err, Err(Error::Topology(_))));
    }
}
