//! MPS reader and writer.
//!
//! Both the fixed (column-positioned) and free (whitespace-separated) layouts
//! are accepted. Gzip-compressed input is detected from the magic bytes.
//! Integrality markers are skipped: integer programs are read as their LP
//! relaxation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::model::{LpProblem, ModelError, SparseMatrix};

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown bound type `{code}`")]
    UnknownBound { line: usize, code: String },
    #[error("line {line}: column `{column}` has lower bound {lower} above upper bound {upper}")]
    InfeasibleBounds {
        line: usize,
        column: String,
        lower: f64,
        upper: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid problem: {0}")]
    Model(#[from] ModelError),
}

/// Line layout of the MPS input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MpsFormat {
    /// Fields split on whitespace; names must not contain blanks.
    #[default]
    Free,
    /// Classic column positions (fields at 2-3, 5-12, 15-22, 25-36, 40-47, 50-61).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Name,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Objective,
    Free,
    Equal,
    Less,
    Greater,
}

struct RowInfo {
    kind: RowKind,
    rhs: f64,
    range: Option<f64>,
}

/// Reads an MPS file from disk (plain or gzip).
pub fn read_mps_file(path: impl AsRef<Path>) -> Result<LpProblem, MpsError> {
    let bytes = std::fs::read(path)?;
    parse_mps(&bytes)
}

/// Parses free-format MPS (which also covers fixed files without blanks in names).
pub fn parse_mps(bytes: &[u8]) -> Result<LpProblem, MpsError> {
    parse_mps_with(bytes, MpsFormat::Free)
}

pub fn parse_mps_with(bytes: &[u8], format: MpsFormat) -> Result<LpProblem, MpsError> {
    let text = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut s = String::new();
        GzDecoder::new(bytes).read_to_string(&mut s)?;
        s
    } else {
        String::from_utf8_lossy(bytes).into_owned()
    };
    Parser::new(format).run(&text)
}

struct Parser {
    format: MpsFormat,
    name: String,
    maximize: bool,
    rows: Vec<RowInfo>,
    row_names: Vec<String>,
    row_index: HashMap<String, usize>,
    objective_row: Option<usize>,
    col_names: Vec<String>,
    col_index: HashMap<String, usize>,
    entries: Vec<(usize, usize, f64)>,
    objective: Vec<f64>,
    objective_constant: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    bound_line: Vec<usize>,
}

fn syntax(line: usize, message: impl Into<String>) -> MpsError {
    MpsError::Syntax {
        line,
        message: message.into(),
    }
}

fn number(line: usize, tok: &str) -> Result<f64, MpsError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| syntax(line, format!("expected a number, found `{tok}`")))?;
    if v.is_nan() {
        return Err(syntax(line, "NaN is not a valid value"));
    }
    Ok(v)
}

fn fixed_fields(line: &str) -> Vec<String> {
    const SPANS: [(usize, usize); 6] = [(1, 3), (4, 12), (14, 22), (24, 36), (39, 47), (49, 61)];
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    for (lo, hi) in SPANS {
        if lo >= chars.len() {
            break;
        }
        let field: String = chars[lo..hi.min(chars.len())].iter().collect();
        let field = field.trim();
        if !field.is_empty() {
            out.push(field.to_string());
        }
    }
    out
}

impl Parser {
    fn new(format: MpsFormat) -> Self {
        Parser {
            format,
            name: String::new(),
            maximize: false,
            rows: Vec::new(),
            row_names: Vec::new(),
            row_index: HashMap::new(),
            objective_row: None,
            col_names: Vec::new(),
            col_index: HashMap::new(),
            entries: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            lower: Vec::new(),
            upper: Vec::new(),
            bound_line: Vec::new(),
        }
    }

    fn run(mut self, text: &str) -> Result<LpProblem, MpsError> {
        let mut section: Option<Section> = None;
        let mut seen_rows = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('*') {
                continue;
            }
            if !line.starts_with(' ') && !line.starts_with('\t') {
                let next = self.header(lineno, line)?;
                match next {
                    Section::Rows => seen_rows = true,
                    Section::Columns | Section::Rhs | Section::Ranges | Section::Bounds
                        if !seen_rows =>
                    {
                        return Err(syntax(lineno, "section appears before ROWS"))
                    }
                    _ => {}
                }
                section = Some(next);
                if next == Section::End {
                    break;
                }
                continue;
            }
            let tokens: Vec<String> = match self.format {
                MpsFormat::Free => line.split_whitespace().map(str::to_string).collect(),
                MpsFormat::Fixed => fixed_fields(line),
            };
            if tokens.is_empty() {
                continue;
            }
            match section {
                None | Some(Section::Name) | Some(Section::End) => {
                    return Err(syntax(lineno, "data line outside of a section"))
                }
                Some(Section::ObjSense) => self.objsense(lineno, &tokens[0])?,
                Some(Section::Rows) => self.row_line(lineno, &tokens)?,
                Some(Section::Columns) => self.column_line(lineno, &tokens)?,
                Some(Section::Rhs) => self.rhs_line(lineno, &tokens, false)?,
                Some(Section::Ranges) => self.rhs_line(lineno, &tokens, true)?,
                Some(Section::Bounds) => self.bound_line(lineno, &tokens)?,
            }
        }
        self.finish()
    }

    fn header(&mut self, lineno: usize, line: &str) -> Result<Section, MpsError> {
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("").to_ascii_uppercase();
        let sec = match head.as_str() {
            "NAME" => {
                self.name = parts.collect::<Vec<_>>().join(" ");
                Section::Name
            }
            "OBJSENSE" => {
                if let Some(sense) = parts.next() {
                    self.objsense(lineno, sense)?;
                }
                Section::ObjSense
            }
            "ROWS" => Section::Rows,
            "COLUMNS" => Section::Columns,
            "RHS" => Section::Rhs,
            "RANGES" => Section::Ranges,
            "BOUNDS" => Section::Bounds,
            "ENDATA" => Section::End,
            _ => return Err(syntax(lineno, format!("unknown section header `{head}`"))),
        };
        Ok(sec)
    }

    fn objsense(&mut self, lineno: usize, tok: &str) -> Result<(), MpsError> {
        match tok.to_ascii_uppercase().as_str() {
            "MAX" | "MAXIMIZE" => self.maximize = true,
            "MIN" | "MINIMIZE" => self.maximize = false,
            other => return Err(syntax(lineno, format!("unknown objective sense `{other}`"))),
        }
        Ok(())
    }

    fn row_line(&mut self, lineno: usize, tokens: &[String]) -> Result<(), MpsError> {
        if tokens.len() != 2 {
            return Err(syntax(lineno, "ROWS entry needs a type and a name"));
        }
        let kind = match tokens[0].to_ascii_uppercase().as_str() {
            "N" if self.objective_row.is_none() => RowKind::Objective,
            "N" => RowKind::Free,
            "E" => RowKind::Equal,
            "L" => RowKind::Less,
            "G" => RowKind::Greater,
            other => return Err(syntax(lineno, format!("unknown row type `{other}`"))),
        };
        let name = tokens[1].clone();
        if self.row_index.contains_key(&name) {
            return Err(syntax(lineno, format!("duplicate row `{name}`")));
        }
        let idx = self.rows.len();
        if kind == RowKind::Objective {
            self.objective_row = Some(idx);
        }
        self.row_index.insert(name.clone(), idx);
        self.row_names.push(name);
        self.rows.push(RowInfo {
            kind,
            rhs: 0.0,
            range: None,
        });
        Ok(())
    }

    fn row(&self, lineno: usize, name: &str) -> Result<usize, MpsError> {
        self.row_index
            .get(name)
            .copied()
            .ok_or_else(|| syntax(lineno, format!("unknown row `{name}`")))
    }

    fn column(&mut self, name: &str) -> usize {
        if let Some(&j) = self.col_index.get(name) {
            return j;
        }
        let j = self.col_names.len();
        self.col_index.insert(name.to_string(), j);
        self.col_names.push(name.to_string());
        self.objective.push(0.0);
        self.lower.push(0.0);
        self.upper.push(f64::INFINITY);
        self.bound_line.push(0);
        j
    }

    fn column_line(&mut self, lineno: usize, tokens: &[String]) -> Result<(), MpsError> {
        if tokens.iter().any(|t| t.contains("'MARKER'")) {
            return Ok(());
        }
        if tokens.len() != 3 && tokens.len() != 5 {
            return Err(syntax(lineno, "COLUMNS entry needs 3 or 5 fields"));
        }
        let j = self.column(&tokens[0]);
        for pair in tokens[1..].chunks(2) {
            let r = self.row(lineno, &pair[0])?;
            let v = number(lineno, &pair[1])?;
            if !v.is_finite() {
                return Err(syntax(lineno, "matrix coefficients must be finite"));
            }
            if Some(r) == self.objective_row {
                self.objective[j] += v;
            } else {
                self.entries.push((r, j, v));
            }
        }
        Ok(())
    }

    fn rhs_line(&mut self, lineno: usize, tokens: &[String], ranges: bool) -> Result<(), MpsError> {
        // An odd field count means a leading set name.
        let pairs = match tokens.len() {
            2 | 4 => tokens,
            3 | 5 => &tokens[1..],
            _ => return Err(syntax(lineno, "RHS/RANGES entry has a bad field count")),
        };
        for pair in pairs.chunks(2) {
            let r = self.row(lineno, &pair[0])?;
            let v = number(lineno, &pair[1])?;
            let row = &mut self.rows[r];
            if ranges {
                if matches!(row.kind, RowKind::Objective | RowKind::Free) {
                    return Err(syntax(lineno, "RANGES on a free row"));
                }
                row.range = Some(v);
            } else if row.kind == RowKind::Objective {
                self.objective_constant = -v;
            } else {
                row.rhs = v;
            }
        }
        Ok(())
    }

    fn bound_line(&mut self, lineno: usize, tokens: &[String]) -> Result<(), MpsError> {
        let code = tokens[0].to_ascii_uppercase();
        let with_value = match code.as_str() {
            "UP" | "LO" | "FX" | "LI" | "UI" => true,
            "FR" | "MI" | "PL" | "BV" => false,
            _ => {
                return Err(MpsError::UnknownBound {
                    line: lineno,
                    code: tokens[0].clone(),
                })
            }
        };
        let (col, value) = match (with_value, tokens.len()) {
            (true, 4) => (&tokens[2], Some(number(lineno, &tokens[3])?)),
            (true, 3) => (&tokens[1], Some(number(lineno, &tokens[2])?)),
            (false, 2) => (&tokens[1], None),
            (false, 4) => (&tokens[2], None),
            (false, 3) => {
                // `BV x 1` (no set name, trailing value) vs `FR BND x`.
                if self.col_index.contains_key(&tokens[1]) && tokens[2].parse::<f64>().is_ok() {
                    (&tokens[1], None)
                } else {
                    (&tokens[2], None)
                }
            }
            _ => {
                return Err(syntax(
                    lineno,
                    format!("bad field count for bound `{code}`"),
                ))
            }
        };
        let j = *self
            .col_index
            .get(col.as_str())
            .ok_or_else(|| syntax(lineno, format!("unknown column `{col}`")))?;
        let (lo, up) = (&mut self.lower[j], &mut self.upper[j]);
        match code.as_str() {
            "UP" | "UI" => *up = value.unwrap(),
            "LO" | "LI" => *lo = value.unwrap(),
            "FX" => {
                *lo = value.unwrap();
                *up = value.unwrap();
            }
            "FR" => {
                *lo = f64::NEG_INFINITY;
                *up = f64::INFINITY;
            }
            "MI" => *lo = f64::NEG_INFINITY,
            "PL" => *up = f64::INFINITY,
            "BV" => {
                *lo = 0.0;
                *up = 1.0;
            }
            _ => unreachable!(),
        }
        self.bound_line[j] = lineno;
        Ok(())
    }

    fn finish(self) -> Result<LpProblem, MpsError> {
        for j in 0..self.col_names.len() {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(MpsError::InfeasibleBounds {
                    line: self.bound_line[j],
                    column: self.col_names[j].clone(),
                    lower: l,
                    upper: u,
                });
            }
        }

        // Compact constraint rows: the objective row is not a constraint.
        let mut remap = vec![usize::MAX; self.rows.len()];
        let mut row_names = Vec::new();
        let mut con_lower = Vec::new();
        let mut con_upper = Vec::new();
        for (r, info) in self.rows.iter().enumerate() {
            let (lo, up) = match info.kind {
                RowKind::Objective => continue,
                RowKind::Free => (f64::NEG_INFINITY, f64::INFINITY),
                RowKind::Equal => match info.range {
                    None => (info.rhs, info.rhs),
                    Some(rg) if rg >= 0.0 => (info.rhs, info.rhs + rg),
                    Some(rg) => (info.rhs + rg, info.rhs),
                },
                RowKind::Less => (
                    info.range
                        .map_or(f64::NEG_INFINITY, |rg| info.rhs - rg.abs()),
                    info.rhs,
                ),
                RowKind::Greater => (
                    info.rhs,
                    info.range.map_or(f64::INFINITY, |rg| info.rhs + rg.abs()),
                ),
            };
            remap[r] = row_names.len();
            row_names.push(self.row_names[r].clone());
            con_lower.push(lo);
            con_upper.push(up);
        }

        let mut triplets: Vec<(usize, usize, f64)> = self
            .entries
            .iter()
            .map(|&(r, j, v)| (remap[r], j, v))
            .collect();
        triplets.sort_by_key(|e| (e.0, e.1));
        let summed = SparseMatrix::from_triplets(row_names.len(), self.col_names.len(), &triplets)?;
        let kept: Vec<(usize, usize, f64)> = summed.triplets().filter(|t| t.2 != 0.0).collect();
        let matrix = SparseMatrix::from_triplets(row_names.len(), self.col_names.len(), &kept)?;

        let sign = if self.maximize { -1.0 } else { 1.0 };
        let problem = LpProblem {
            name: self.name,
            matrix,
            objective: self.objective.iter().map(|c| sign * c).collect(),
            objective_constant: sign * self.objective_constant,
            var_lower: self.lower,
            var_upper: self.upper,
            con_lower,
            con_upper,
            maximize: self.maximize,
            row_names,
            col_names: self.col_names,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// Serializes a problem as free-format MPS.
///
/// Ranged rows are written as `E` rows whose range sign picks the anchored
/// bound; free rows as extra `N` rows, which the reader maps back to free constraints.
pub fn write_mps(p: &LpProblem) -> String {
    let m = p.num_constraints();
    let n = p.num_variables();
    let row_name = |i: usize| {
        p.row_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("R{i}"))
    };
    let col_name = |j: usize| {
        p.col_names
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("C{j}"))
    };
    let mut obj_name = String::from("OBJ");
    while (0..m).any(|i| row_name(i) == obj_name) {
        obj_name.push('_');
    }
    let sign = if p.maximize { -1.0 } else { 1.0 };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "NAME {}",
        if p.name.is_empty() { "LP" } else { &p.name }
    );
    if p.maximize {
        let _ = writeln!(out, "OBJSENSE\n    MAX");
    }
    let _ = writeln!(out, "ROWS");
    let _ = writeln!(out, " N  {obj_name}");
    let mut rhs = Vec::new();
    let mut ranges = Vec::new();
    for i in 0..m {
        let (l, u) = (p.con_lower[i], p.con_upper[i]);
        let kind = match (l.is_finite(), u.is_finite()) {
            (false, false) => "N",
            (true, false) => {
                rhs.push((i, l));
                "G"
            }
            (false, true) => {
                rhs.push((i, u));
                "L"
            }
            // Anchor on the smaller-magnitude bound so the reconstructed one
            // (`rhs ± |R|`) stays within an ulp or two of itself.
            (true, true) if u == l || l.abs() <= u.abs() => {
                rhs.push((i, l));
                if u != l {
                    ranges.push((i, u - l));
                }
                "E"
            }
            (true, true) => {
                rhs.push((i, u));
                ranges.push((i, l - u));
                "E"
            }
        };
        let _ = writeln!(out, " {kind}  {}", row_name(i));
    }

    let _ = writeln!(out, "COLUMNS");
    let at = p.matrix.transpose();
    for j in 0..n {
        let name = col_name(j);
        if p.objective[j] != 0.0 {
            let _ = writeln!(out, "    {name}  {obj_name}  {}", sign * p.objective[j]);
        }
        let (rows, vals) = at.row(j);
        for (&i, &v) in rows.iter().zip(vals) {
            let _ = writeln!(out, "    {name}  {}  {v}", row_name(i));
        }
        if p.objective[j] == 0.0 && rows.is_empty() {
            // Keep empty columns visible to the reader.
            let _ = writeln!(out, "    {name}  {obj_name}  0");
        }
    }

    let _ = writeln!(out, "RHS");
    if p.objective_constant != 0.0 {
        let _ = writeln!(out, "    RHS  {obj_name}  {}", -sign * p.objective_constant);
    }
    for (i, v) in rhs {
        if v != 0.0 {
            let _ = writeln!(out, "    RHS  {}  {v}", row_name(i));
        }
    }
    if !ranges.is_empty() {
        let _ = writeln!(out, "RANGES");
        for (i, v) in ranges {
            let _ = writeln!(out, "    RNG  {}  {v}", row_name(i));
        }
    }

    let _ = writeln!(out, "BOUNDS");
    for j in 0..n {
        let name = col_name(j);
        let (l, u) = (p.var_lower[j], p.var_upper[j]);
        if l == u {
            let _ = writeln!(out, " FX BND  {name}  {l}");
            continue;
        }
        if l == f64::NEG_INFINITY && u == f64::INFINITY {
            let _ = writeln!(out, " FR BND  {name}");
            continue;
        }
        if l == f64::NEG_INFINITY {
            let _ = writeln!(out, " MI BND  {name}");
        } else if l != 0.0 {
            let _ = writeln!(out, " LO BND  {name}  {l}");
        }
        if u != f64::INFINITY {
            let _ = writeln!(out, " UP BND  {name}  {u}");
        }
    }
    let _ = writeln!(out, "ENDATA");
    out
}
