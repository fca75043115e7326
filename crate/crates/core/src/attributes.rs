//! Binary attribute tables and the subgroups derived from them.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttributeError {
    #[error("unknown attribute {name:?} (known: {known})")]
    UnknownAttribute { name: String, known: String },
    #[error("example {0:?} is not in the attribute table")]
    MissingExample(String),
    #[error("duplicate example {0:?} in attribute table")]
    DuplicateExample(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = AttributeError> = std::result::Result<T, E>;

/// Per-example binary attributes, e.g. `Male`, `Young`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeTable {
    names: Vec<String>,
    rows: HashMap<String, Vec<bool>>,
    /// Conjunctions of unitary attributes to report as intersectional subgroups.
    intersections: Vec<Vec<String>>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            rows: HashMap::new(),
            intersections: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, example_id: String, values: Vec<bool>) -> Result<()> {
        assert_eq!(values.len(), self.names.len(), "attribute row width");
        if self.rows.contains_key(&example_id) {
            return Err(AttributeError::DuplicateExample(example_id));
        }
        self.rows.insert(example_id, values);
        Ok(())
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| AttributeError::UnknownAttribute {
                name: name.to_string(),
                known: self.names.join(", "),
            })
    }

    pub fn row(&self, example_id: &str) -> Option<&[bool]> {
        self.rows.get(example_id).map(Vec::as_slice)
    }

    pub fn get(&self, example_id: &str, attribute: usize) -> Result<bool> {
        self.row(example_id)
            .map(|r| r[attribute])
            .ok_or_else(|| AttributeError::MissingExample(example_id.to_string()))
    }

    /// Named values for one example, in header order.
    pub fn named_row(&self, example_id: &str) -> Option<BTreeMap<String, bool>> {
        self.row(example_id).map(|r| {
            self.names
                .iter()
                .cloned()
                .zip(r.iter().copied())
                .collect()
        })
    }

    pub fn intersections(&self) -> &[Vec<String>] {
        &self.intersections
    }

    /// Declares an intersection; every member must be a declared attribute.
    pub fn add_intersection(&mut self, members: Vec<String>) -> Result<()> {
        for m in &members {
            self.attribute_index(m)?;
        }
        self.intersections.push(members);
        Ok(())
    }

    /// Fraction of `examples` carrying each attribute. Fails if any example is
    /// absent from the table.
    pub fn fractions<'a>(
        &self,
        examples: impl IntoIterator<Item = &'a str>,
    ) -> Result<BTreeMap<String, f64>> {
        let mut counts = vec![0usize; self.names.len()];
        let mut total = 0usize;
        for e in examples {
            let row = self
                .row(e)
                .ok_or_else(|| AttributeError::MissingExample(e.to_string()))?;
            for (c, &v) in counts.iter_mut().zip(row) {
                *c += v as usize;
            }
            total += 1;
        }
        Ok(self
            .names
            .iter()
            .zip(counts)
            .map(|(n, c)| {
                let f = if total == 0 { 0.0 } else { c as f64 / total as f64 };
                (n.clone(), f)
            })
            .collect())
    }

    /// Attribute fractions over the whole table.
    pub fn overall_fractions(&self) -> BTreeMap<String, f64> {
        let mut ids: Vec<&str> = self.rows.keys().map(String::as_str).collect();
        ids.sort_unstable();
        self.fractions(ids).expect("ids come from the table")
    }

    /// Aggregate, each attribute and its complement, then every sign
    /// combination of each declared intersection.
    pub fn subgroups(&self) -> Vec<Subgroup> {
        let mut out = vec![Subgroup::aggregate()];
        for n in &self.names {
            out.push(Subgroup::literal(n, true));
            out.push(Subgroup::literal(n, false));
        }
        for members in &self.intersections {
            let k = members.len();
            for mask in 0..(1u32 << k) {
                let literals: Vec<(String, bool)> = members
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (m.clone(), mask & (1 << (k - 1 - i)) == 0))
                    .collect();
                out.push(Subgroup::conjunction(literals));
            }
        }
        out
    }

    pub fn read<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse_err = |message: String| AttributeError::Parse {
            path: source.to_string(),
            message,
        };
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(crate::ledger::csv_error_message(&e)))?
            .clone();
        if headers.get(0) != Some("example_id") {
            return Err(parse_err("first column must be example_id".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut table = AttributeTable::new(names);
        for row in rdr.records() {
            let row = row.map_err(|e| parse_err(crate::ledger::csv_error_message(&e)))?;
            let line = row.position().map_or(0, |p| p.line());
            let id = row[0].to_string();
            let values = row
                .iter()
                .skip(1)
                .map(|v| match v {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(parse_err(format!(
                        "line {line}: attribute value must be 0 or 1, got {other:?}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            table.insert(id, values)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|source| AttributeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Writes the table with rows sorted by example id.
    pub fn write<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["example_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut ids: Vec<&String> = self.rows.keys().collect();
        ids.sort();
        for id in ids {
            let mut rec = vec![id.clone()];
            rec.extend(
                self.rows[id]
                    .iter()
                    .map(|&v| if v { "1" } else { "0" }.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupKind {
    Aggregate,
    Unitary,
    Intersectional,
}

/// A conjunction of attribute literals (`Male`, `not Young`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub name: String,
    pub kind: SubgroupKind,
    pub literals: Vec<(String, bool)>,
}

impl Subgroup {
    pub fn aggregate() -> Self {
        Self {
            name: "aggregate".into(),
            kind: SubgroupKind::Aggregate,
            literals: Vec::new(),
        }
    }

    pub fn literal(attribute: &str, value: bool) -> Self {
        Self {
            name: literal_name(attribute, value),
            kind: SubgroupKind::Unitary,
            literals: vec![(attribute.to_string(), value)],
        }
    }

    pub fn conjunction(literals: Vec<(String, bool)>) -> Self {
        let name = literals
            .iter()
            .map(|(a, v)| literal_name(a, *v))
            .collect::<Vec<_>>()
            .join(" & ");
        Self {
            name,
            kind: SubgroupKind::Intersectional,
            literals,
        }
    }

    pub fn contains(&self, table: &AttributeTable, example_id: &str) -> Result<bool> {
        if self.literals.is_empty() {
            return Ok(true);
        }
        let row = table
            .row(example_id)
            .ok_or_else(|| AttributeError::MissingExample(example_id.to_string()))?;
        for (attr, want) in &self.literals {
            if row[table.attribute_index(attr)?] != *want {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn literal_name(attribute: &str, value: bool) -> String {
    if value {
        attribute.to_string()
    } else {
        format!("not {attribute}")
    }
}

/// Reads an optional sidecar mapping example ids to media URLs or paths.
pub fn read_media_sidecar(path: &Path) -> Result<HashMap<String, String>> {
    let file = fs::File::open(path).map_err(|source| AttributeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| AttributeError::Parse {
            path: path.display().to_string(),
            message: crate::ledger::csv_error_message(&e),
        })?;
        if row.len() >= 2 {
            out.insert(row[0].to_string(), row[1].to_string());
        }
    }
    Ok(out)
}
