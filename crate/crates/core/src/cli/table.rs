//! Typed CSV result tables with a `#`-prefixed provenance header.
//!
//! Layout:
//!
//! ```text
//! # tool: hetnet 0.1.0
//! # command: optimize --method auto
//! # config_sha256: ...
//! # config: [network]
//! # config: ...
//! # units: ,,s
//! # types: text,int,float
//! scope,tier,delay_bound_s
//! ...
//! ```
//!
//! The embedded config is enough to rerun the command and get the same rows.
//! Infinite delays are written as `inf`; missing cells are empty.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row} has {got} cells, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("bad table header: {0}")]
    Header(String),
    #[error("cannot read `{cell}` in column `{column}` as {ty}")]
    Cell { column: String, cell: String, ty: ColumnType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Int,
    Float,
    Bool,
    Text,
}

impl ColumnType {
    fn name(self) -> &'static str {
        match self {
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Bool => "bool",
            ColumnType::Text => "text",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "int" => ColumnType::Int,
            "float" => ColumnType::Float,
            "bool" => ColumnType::Bool,
            "text" => ColumnType::Text,
            _ => return None,
        })
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            // Display gives the shortest string that parses back exactly, and
            // `inf`/`-inf`/`NaN` for the specials.
            Value::Float(x) => x.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
            Value::Missing => String::new(),
        }
    }

    fn parse(cell: &str, column: &Column) -> Result<Self, TableError> {
        if cell.is_empty() {
            return Ok(Value::Missing);
        }
        let bad = || TableError::Cell {
            column: column.name.clone(),
            cell: cell.to_string(),
            ty: column.ty,
        };
        Ok(match column.ty {
            ColumnType::Int => Value::Int(cell.parse().map_err(|_| bad())?),
            ColumnType::Float => Value::Float(cell.parse().map_err(|_| bad())?),
            ColumnType::Bool => Value::Bool(cell.parse().map_err(|_| bad())?),
            ColumnType::Text => Value::Text(cell.to_string()),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Float(x) => Some(x),
            Value::Int(i) => Some(i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<usize> for Value {
    fn from(i: usize) -> Self {
        Value::Int(i as i64)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Missing, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    /// Ordered `key: value` provenance lines. A key may repeat.
    pub provenance: Vec<(String, String)>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn new(columns: Vec<Column>) -> Self {
        Self {
            provenance: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Cell by row index and column name.
    pub fn get(&self, row: usize, name: &str) -> Option<&Value> {
        self.column(name).and_then(|c| self.rows.get(row).map(|r| &r[c]))
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), TableError> {
        for (k, v) in &self.provenance {
            writeln!(out, "# {k}: {v}")?;
        }
        let join = |f: &dyn Fn(&Column) -> &str| {
            self.columns.iter().map(f).collect::<Vec<_>>().join(",")
        };
        writeln!(out, "# units: {}", join(&|c| c.unit.as_str()))?;
        writeln!(out, "# types: {}", join(&|c| c.ty.name()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("table text is UTF-8")
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, TableError> {
        let mut provenance = Vec::new();
        let mut units = None;
        let mut types = None;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once(": ")
                    .or_else(|| rest.strip_suffix(':').map(|k| (k, "")))
                    .ok_or_else(|| TableError::Header(line.clone()))?;
                match k {
                    "units" => units = Some(v.to_string()),
                    "types" => types = Some(v.to_string()),
                    _ => provenance.push((k.to_string(), v.to_string())),
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let types = types.ok_or_else(|| TableError::Header("missing `# types:` line".into()))?;
        let units = units.unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(body.as_bytes());
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let types: Vec<ColumnType> = types
            .split(',')
            .map(|t| ColumnType::from_name(t).ok_or_else(|| TableError::Header(format!("unknown type `{t}`"))))
            .collect::<Result<_, _>>()?;
        let units: Vec<&str> = units.split(',').collect();
        if types.len() != names.len() || units.len() != names.len() {
            return Err(TableError::Header("schema lines do not match the column count".into()));
        }
        let columns: Vec<Column> = names
            .into_iter()
            .zip(types)
            .zip(units)
            .map(|((n, t), u)| Column::new(n, t, u))
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(TableError::Ragged {
                    row: i,
                    got: rec.len(),
                    expected: columns.len(),
                });
            }
            rows.push(
                rec.iter()
                    .zip(&columns)
                    .map(|(cell, col)| Value::parse(cell, col))
                    .collect::<Result<_, _>>()?,
            );
        }
        Ok(Self {
            provenance,
            columns,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut t = ResultTable::new(vec![
            Column::new("scope", ColumnType::Text, ""),
            Column::new("tier", ColumnType::Int, ""),
            Column::new("delay_bound_s", ColumnType::Float, "s"),
            Column::new("stable", ColumnType::Bool, ""),
        ]);
        t.provenance.push(("tool".into(), "hetnet test".into()));
        t.provenance.push(("config".into(), "[network]".into()));
        t.push(vec!["tier".into(), 1usize.into(), 0.0213.into(), true.into()]);
        t.push(vec!["tier".into(), 2usize.into(), f64::INFINITY.into(), false.into()]);
        t.push(vec!["network, all".into(), Value::Missing, (0.1 + 0.2).into(), false.into()]);
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let text = t.to_csv_string();
        assert!(text.contains(",inf,"), "{text}");
        let back = ResultTable::read(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(2, "delay_bound_s").unwrap().as_f64(), Some(0.1 + 0.2));
    }

    #[test]
    fn inf_token_parses() {
        let text = "# types: float\nx\ninf\n-inf\n";
        let t = ResultTable::read(text.as_bytes()).unwrap();
        assert_eq!(t.rows[0][0], Value::Float(f64::INFINITY));
        assert_eq!(t.rows[1][0], Value::Float(f64::NEG_INFINITY));
    }

    #[test]
    fn ragged_rejected() {
        let text = "# types: float,float\n# units: s,s\na,b\n1,2\n3\n";
        assert!(ResultTable::read(text.as_bytes()).is_err());
    }

    #[test]
    #[should_panic]
    fn push_checks_width() {
        sample().push(vec![Value::Missing]);
    }
}
