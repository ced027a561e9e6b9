use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{FeatureMode, FeatureSource, GraphBuilder, GraphError, KnowledgeGraph, Triple, Vocab};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub duplicates_dropped: usize,
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, GraphError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Raw `head<TAB>relation<TAB>tail` records, skipping blank lines.
pub(crate) fn read_records<R: Read>(
    reader: R,
    origin: &str,
) -> Result<Vec<(usize, [String; 3])>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| GraphError::Parse {
            origin: origin.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::Parse {
                origin: origin.to_string(),
                line: line_no,
                message: format!(
                    "expected 3 tab-separated fields (head, relation, tail), found {}",
                    fields.len()
                ),
            });
        }
        out.push((
            line_no,
            [fields[0].to_string(), fields[1].to_string(), fields[2].to_string()],
        ));
    }
    Ok(out)
}

/// Parses a triple stream into a fresh graph.
pub fn parse_triples<R: Read>(reader: R, origin: &str) -> Result<(KnowledgeGraph, LoadStats), GraphError> {
    let records = read_records(reader, origin)?;
    if records.is_empty() {
        return Err(GraphError::EmptyGraph(origin.to_string()));
    }
    let mut b = GraphBuilder::new();
    for (_, [h, r, t]) in &records {
        b.add(h, r, t)?;
    }
    let stats = LoadStats {
        lines: records.len(),
        duplicates_dropped: b.duplicates,
    };
    Ok((b.finish(), stats))
}

pub fn load_triples(path: &Path) -> Result<(KnowledgeGraph, LoadStats), GraphError> {
    parse_triples(open(path)?, &path.display().to_string())
}

/// Loads a triple file against a fixed relation vocabulary; unknown
/// relations are a parse error. An empty file yields an empty graph.
pub fn load_triples_with_relations(
    path: &Path,
    relations: &Vocab,
) -> Result<KnowledgeGraph, GraphError> {
    let origin = path.display().to_string();
    let records = read_records(open(path)?, &origin)?;
    let mut b = GraphBuilder::with_relations(relations.clone());
    for (line, [h, r, t]) in &records {
        b.add(h, r, t).map_err(|e| match e {
            GraphError::UnknownRelation(r) => GraphError::Parse {
                origin: origin.clone(),
                line: *line,
                message: format!("unknown relation `{r}`"),
            },
            other => other,
        })?;
    }
    Ok(b.finish())
}

/// Writes `triples` as tab-separated id lines.
pub fn write_triples(path: &Path, graph: &KnowledgeGraph, triples: &[Triple]) -> Result<(), GraphError> {
    let io_err = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = String::new();
    for t in triples {
        let (h, r, tl) = graph.triple_strings(t);
        out.push_str(&format!("{h}\t{r}\t{tl}\n"));
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Parses the `N d` header format and returns `(ids, rows)` in file order.
pub(crate) fn read_feature_table<R: Read>(
    reader: R,
    origin: &str,
) -> Result<(Vec<String>, Vec<Vec<f64>>, usize), GraphError> {
    let parse_err = |line: usize, message: String| GraphError::Parse {
        origin: origin.to_string(),
        line,
        message,
    };
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (n, d) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(1, "missing `N d` header".into()));
        };
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [n, d] => n.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
            _ => None,
        };
        break parsed.ok_or_else(|| parse_err(i + 1, format!("bad header `{line}`, expected `N d`")))?;
    };
    if d == 0 {
        return Err(parse_err(1, "feature dimension must be positive".into()));
    }

    let mut ids = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(line_no, format!("`{v}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != d {
            return Err(GraphError::Dimension {
                origin: origin.to_string(),
                line: line_no,
                expected: d,
                found: values.len(),
            });
        }
        ids.push(id.to_string());
        rows.push(values);
    }
    if ids.len() != n {
        return Err(parse_err(1, format!("header declares {n} rows, file has {}", ids.len())));
    }
    Ok((ids, rows, d))
}

/// Loads fixed attribute features for every entity of `entities`, in
/// vocabulary order. Rows for ids outside the vocabulary are ignored.
pub fn load_features(path: &Path, entities: &Vocab) -> Result<FeatureSource, GraphError> {
    let origin = path.display().to_string();
    let (ids, rows, d) = read_feature_table(open(path)?, &origin)?;
    features_for(entities, ids, rows, d, &origin)
}

pub(crate) fn features_for(
    entities: &Vocab,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    d: usize,
    origin: &str,
) -> Result<FeatureSource, GraphError> {
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::with_capacity(ids.len());
    for (id, row) in ids.into_iter().zip(rows) {
        if by_id.insert(id.clone(), row).is_some() {
            return Err(GraphError::Parse {
                origin: origin.to_string(),
                line: 0,
                message: format!("duplicate feature row for `{id}`"),
            });
        }
    }
    let missing: Vec<String> = entities
        .ids()
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(GraphError::Coverage { missing });
    }
    let mut data = Vec::with_capacity(entities.len() * d);
    for id in entities.ids() {
        data.extend_from_slice(&by_id[id]);
    }
    let values = Tensor::new(entities.len(), d, data).expect("rows have uniform length");
    FeatureSource::new(FeatureMode::File, values)
}
