use std::io::{BufRead, Write};

use super::{ConstructedNetwork, DataCube, LinkRecord, ObjectRecord};
use crate::error::{Error, Result};

/// Reads one JSON object record per line. Blank lines are skipped.
pub fn read_objects(reader: impl BufRead) -> Result<Vec<ObjectRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObjectRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads tab-separated `source<TAB>target[<TAB>weight]` lines.
pub fn read_links(reader: impl BufRead) -> Result<Vec<LinkRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let weight = match fields.len() {
            2 => 1.0,
            3 => fields[2]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(format!("bad weight {:?}: {e}", fields[2])))?,
            n => return Err(parse_err(format!("expected 2 or 3 fields, found {n}"))),
        };
        out.push(LinkRecord::weighted(fields[0].trim(), fields[1].trim(), weight));
    }
    Ok(out)
}

/// Reads one object id per line.
pub fn read_query(reader: impl BufRead) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

/// Writes `nodes.tsv` (one id per line) and `edges.tsv`
/// (`source<TAB>target<TAB>weight`).
pub fn write_network(
    cube: &DataCube,
    net: &ConstructedNetwork,
    mut nodes: impl Write,
    mut edges: impl Write,
) -> Result<()> {
    for &n in &net.nodes {
        writeln!(nodes, "{}", cube.object_id(n))?;
    }
    for e in &net.edges {
        writeln!(
            edges,
            "{}\t{}\t{}",
            cube.object_id(e.source),
            cube.object_id(e.target),
            e.weight
        )?;
    }
    Ok(())
}
