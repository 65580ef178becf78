use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Op, Request, RequestSequence, TraceError, VmId};

/// A column addressed either by position or by header name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_owned())
    }
}

/// Describes how raw trace columns map onto [`Request`] fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceMapping {
    pub delimiter: char,
    pub has_header: bool,
    pub vm_id: ColumnRef,
    pub demand: Vec<ColumnRef>,
    pub time: ColumnRef,
    pub op: ColumnRef,
    pub create_code: String,
    pub delete_code: String,
    /// Map non-numeric VM identifiers to dense integers in order of first
    /// appearance.
    pub intern_ids: bool,
}

impl Default for TraceMapping {
    fn default() -> Self {
        Self::canonical()
    }
}

impl TraceMapping {
    /// `vm_id,cpu,memory,time,type` with a header row, `1` = create and
    /// `0` = delete.
    pub fn canonical() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            vm_id: "vm_id".into(),
            demand: vec!["cpu".into(), "memory".into()],
            time: "time".into(),
            op: "type".into(),
            create_code: "1".into(),
            delete_code: "0".into(),
            intern_ids: false,
        }
    }

    /// Same column order as [`canonical`](Self::canonical) but addressed by
    /// position, for headerless files.
    pub fn positional() -> Self {
        Self {
            has_header: false,
            vm_id: 0.into(),
            demand: vec![1.into(), 2.into()],
            time: 3.into(),
            op: 4.into(),
            ..Self::canonical()
        }
    }
}

struct Resolved {
    vm_id: usize,
    demand: Vec<usize>,
    time: usize,
    op: usize,
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>) -> Result<usize, TraceError> {
    match (col, header) {
        (ColumnRef::Index(i), _) => Ok(*i),
        (ColumnRef::Name(name), Some(h)) => h
            .iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| TraceError::MalformedRow { line: 1, reason: format!("no column `{name}`") }),
        (ColumnRef::Name(name), None) => Err(TraceError::MalformedRow {
            line: 1,
            reason: format!("column `{name}` addressed by name but the file has no header"),
        }),
    }
}

pub fn parse_trace(path: impl AsRef<Path>, mapping: &TraceMapping) -> Result<RequestSequence, TraceError> {
    read_trace(File::open(path)?, mapping)
}

pub fn read_trace<R: Read>(reader: R, mapping: &TraceMapping) -> Result<RequestSequence, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter as u8)
        .has_headers(mapping.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = if mapping.has_header { Some(rdr.headers()?.clone()) } else { None };
    let cols = Resolved {
        vm_id: resolve(&mapping.vm_id, header.as_ref())?,
        demand: mapping
            .demand
            .iter()
            .map(|c| resolve(c, header.as_ref()))
            .collect::<Result<_, _>>()?,
        time: resolve(&mapping.time, header.as_ref())?,
        op: resolve(&mapping.op, header.as_ref())?,
    };

    let mut interned: HashMap<String, u64> = HashMap::new();
    let mut live: HashMap<VmId, Vec<u64>> = HashMap::new();
    let mut requests = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<&str, TraceError> {
            record.get(i).ok_or_else(|| TraceError::MalformedRow {
                line,
                reason: format!("missing column {i}"),
            })
        };
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }

        let raw_id = field(cols.vm_id)?;
        let vm_id = if mapping.intern_ids {
            let next = interned.len() as u64;
            VmId(*interned.entry(raw_id.to_owned()).or_insert(next))
        } else {
            VmId(raw_id.parse().map_err(|_| TraceError::MalformedRow {
                line,
                reason: format!("bad vm id `{raw_id}`"),
            })?)
        };

        let raw_op = field(cols.op)?;
        let op = if raw_op == mapping.create_code {
            Op::Create
        } else if raw_op == mapping.delete_code {
            Op::Delete
        } else {
            return Err(TraceError::MalformedRow { line, reason: format!("unknown op code `{raw_op}`") });
        };

        let time = parse_time(field(cols.time)?)
            .ok_or_else(|| TraceError::MalformedRow { line, reason: "bad time".into() })?;

        let mut demand = Vec::with_capacity(cols.demand.len());
        let mut blank = false;
        for &c in &cols.demand {
            let raw = record.get(c).unwrap_or("");
            if raw.is_empty() {
                blank = true;
                continue;
            }
            let v: i64 = raw.parse().map_err(|_| TraceError::MalformedRow {
                line,
                reason: format!("bad demand `{raw}`"),
            })?;
            if v < 0 {
                return Err(TraceError::NegativeDemand { vm_id, line });
            }
            demand.push(v as u64);
        }

        match op {
            Op::Create => {
                if blank {
                    return Err(TraceError::MalformedRow { line, reason: "create without demand".into() });
                }
                live.insert(vm_id, demand.clone());
            }
            Op::Delete => {
                let created = live.remove(&vm_id).ok_or(TraceError::UnmatchedDelete { vm_id })?;
                if blank {
                    demand = created;
                } else if demand != created {
                    return Err(TraceError::DemandMismatch { vm_id });
                }
            }
        }
        requests.push(Request { vm_id, demand, op, time });
    }
    RequestSequence::new(requests)
}

fn parse_time(raw: &str) -> Option<u64> {
    raw.parse::<u64>().ok().or_else(|| {
        let f: f64 = raw.parse().ok()?;
        (f.is_finite() && f >= 0.0).then(|| f.floor() as u64)
    })
}

/// Writes the canonical `vm_id,cpu,memory,time,type` form (generic `d0..dN`
/// demand columns when `d != 2`).
pub fn write_canonical<W: Write>(seq: &RequestSequence, out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let dims = seq.dims().unwrap_or(2);
    let mut header = vec!["vm_id".to_owned()];
    if dims == 2 {
        header.extend(["cpu".to_owned(), "memory".to_owned()]);
    } else {
        header.extend((0..dims).map(|j| format!("d{j}")));
    }
    header.extend(["time".to_owned(), "type".to_owned()]);
    w.write_record(&header)?;
    for r in seq.requests() {
        let mut row = vec![r.vm_id.to_string()];
        row.extend(r.demand.iter().map(u64::to_string));
        row.push(r.time.to_string());
        row.push(if r.is_create() { "1" } else { "0" }.to_owned());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_field_mapping() {
        let seq = read_trace("7,2,4,100,1\n".as_bytes(), &TraceMapping::positional()).unwrap();
        assert_eq!(seq.requests(), &[Request::create(7, [2, 4], 100)]);
    }

    #[test]
    fn matched_delete_accepted_and_inherits_demand() {
        let data = "vm_id,cpu,memory,time,type\n7,2,4,100,1\n7,,,150,0\n";
        let seq = read_trace(data.as_bytes(), &TraceMapping::canonical()).unwrap();
        assert_eq!(seq.requests()[1], Request::delete(7, [2, 4], 150));
    }

    #[test]
    fn unmatched_delete_rejected() {
        let err = read_trace("9,1,1,5,0\n".as_bytes(), &TraceMapping::positional()).unwrap_err();
        assert!(matches!(err, TraceError::UnmatchedDelete { vm_id: VmId(9) }));
    }

    #[test]
    fn negative_demand_and_malformed_rows() {
        let err = read_trace("1,-2,4,0,1\n".as_bytes(), &TraceMapping::positional()).unwrap_err();
        assert!(matches!(err, TraceError::NegativeDemand { .. }));
        let err = read_trace("1,2,4,0,7\n".as_bytes(), &TraceMapping::positional()).unwrap_err();
        assert!(matches!(err, TraceError::MalformedRow { line: 1, .. }));
        let err = read_trace("1,2\n".as_bytes(), &TraceMapping::positional()).unwrap_err();
        assert!(matches!(err, TraceError::MalformedRow { .. }));
    }

    #[test]
    fn named_columns_in_any_order_and_interning() {
        let data = "type;time;vm;mem;cpu\n1;3;a-x;8;2\n1;4;b-y;4;1\n0;9;a-x;8;2\n";
        let mapping = TraceMapping {
            delimiter: ';',
            vm_id: "vm".into(),
            demand: vec!["cpu".into(), "mem".into()],
            intern_ids: true,
            ..TraceMapping::canonical()
        };
        let seq = read_trace(data.as_bytes(), &mapping).unwrap();
        assert_eq!(seq.requests()[0], Request::create(0, [2, 8], 3));
        assert_eq!(seq.requests()[2], Request::delete(0, [2, 8], 9));
    }

    #[test]
    fn canonical_roundtrip() {
        let data = "vm_id,cpu,memory,time,type\n1,2,4,0,1\n2,1,1,0,1\n1,2,4,3,0\n";
        let seq = read_trace(data.as_bytes(), &TraceMapping::canonical()).unwrap();
        let mut out = Vec::new();
        write_canonical(&seq, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), data);
    }
}
