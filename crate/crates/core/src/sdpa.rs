//! Sparse SDPA (`.dat-s`) instances and a line-oriented solution format.
//!
//! Instance grammar:
//!
//! ```text
//! " optional comment lines (leading `"` or `*`)
//! m
//! nblocks
//! block sizes          (separators: whitespace , ( ) { })
//! b_1 ... b_m
//! matno blkno i j value
//! ...
//! ```
//!
//! `matno = 0` is the objective `C`, `matno = k >= 1` the constraint matrix
//! `A_k`. Entries with `i > j` are normalized by swapping. Explicit zeros are
//! accepted and dropped. Duplicate coordinates are rejected, not summed.
//!
//! Solution grammar (`#` starts a comment line):
//!
//! ```text
//! y y_1 ... y_m
//! X blk i j value
//! S blk i j value
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

use crate::model::{BlockStructure, DenseBlockMatrix, Entry, ModelError, SdpInstance, SymBlockMatrix};

#[derive(Debug, Error)]
pub enum SdpaError {
    #[error("line {line}: duplicate entry (matrix {matno}, block {block}, {row}, {col})")]
    DuplicateEntry { line: usize, matno: String, block: usize, row: usize, col: usize },
    #[error("line {line}: {msg}")]
    BadIndex { line: usize, msg: String },
    #[error("line {line}: matrix number {matno} exceeds the number of constraints {m}")]
    BadMatno { line: usize, matno: usize, m: usize },
    #[error("line {line}: off-diagonal entry ({row}, {col}) in diagonal block {block}")]
    BadDiagonalBlockEntry { line: usize, block: usize, row: usize, col: usize },
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

impl SdpaError {
    /// 1-based line number of the offending input, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            SdpaError::DuplicateEntry { line, .. }
            | SdpaError::BadIndex { line, .. }
            | SdpaError::BadMatno { line, .. }
            | SdpaError::BadDiagonalBlockEntry { line, .. }
            | SdpaError::ParseError { line, .. } => Some(*line),
            SdpaError::Io(_) => None,
        }
    }

    fn parse(line: usize, msg: impl Into<String>) -> Self {
        SdpaError::ParseError { line, msg: msg.into() }
    }

    fn from_model(line: usize, e: ModelError) -> Self {
        SdpaError::parse(line, e.to_string())
    }
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '(' | ')' | '{' | '}'))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Parses a finite machine-precision decimal. Fortran `D` exponents are
/// accepted.
fn parse_value(tok: &str, line: usize) -> Result<f64, SdpaError> {
    let v = if tok.contains(['d', 'D']) {
        tok.replace(['d', 'D'], "e").parse::<f64>()
    } else {
        tok.parse::<f64>()
    };
    match v {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(SdpaError::parse(line, format!("non-finite value `{tok}`"))),
        Err(_) => Err(SdpaError::parse(line, format!("malformed number `{tok}`"))),
    }
}

fn parse_count(tok: &str, line: usize, what: &str) -> Result<usize, SdpaError> {
    tok.parse::<usize>()
        .map_err(|_| SdpaError::parse(line, format!("malformed {what} `{tok}`")))
}

fn is_comment(trimmed: &str) -> bool {
    trimmed.starts_with('"') || trimmed.starts_with('*')
}

/// Checks block/row/col of an entry against a structure, normalizing `i > j`.
fn check_entry(
    structure: &BlockStructure,
    line: usize,
    block: usize,
    i: usize,
    j: usize,
) -> Result<(usize, usize), SdpaError> {
    if block == 0 || block > structure.num_blocks() {
        return Err(SdpaError::BadIndex {
            line,
            msg: format!("block {block} out of range 1..={}", structure.num_blocks()),
        });
    }
    let dim = structure.block_dim(block);
    for idx in [i, j] {
        if idx == 0 || idx > dim {
            return Err(SdpaError::BadIndex {
                line,
                msg: format!("index {idx} out of range 1..={dim} for block {block}"),
            });
        }
    }
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    if structure.is_diagonal(block) && i != j {
        return Err(SdpaError::BadDiagonalBlockEntry { line, block, row: i, col: j });
    }
    Ok((i, j))
}

enum Phase {
    M,
    NBlocks,
    Sizes,
    Rhs,
    Entries,
}

pub fn parse_instance_str(text: &str) -> Result<SdpInstance, SdpaError> {
    parse_instance(text.as_bytes())
}

pub fn parse_instance<R: BufRead>(reader: R) -> Result<SdpInstance, SdpaError> {
    let mut phase = Phase::M;
    let mut label_lines: Vec<String> = Vec::new();
    let mut m = 0usize;
    let mut nblocks = 0usize;
    let mut sizes: Vec<i64> = Vec::new();
    let mut structure = BlockStructure::empty();
    let mut rhs: Vec<f64> = Vec::new();
    let mut entries: Vec<Vec<Entry>> = Vec::new();
    let mut seen: HashSet<(usize, usize, usize, usize)> = HashSet::new();
    let mut last_line = 0usize;

    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        last_line = lineno;
        let line = line?;
        let trimmed = line.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        if is_comment(trimmed) {
            if matches!(phase, Phase::M) {
                let body = &trimmed[1..];
                label_lines.push(body.strip_prefix(' ').unwrap_or(body).to_string());
            }
            continue;
        }
        let toks = tokens(trimmed);
        match phase {
            Phase::M => {
                let tok = toks.first().ok_or_else(|| SdpaError::parse(lineno, "expected m"))?;
                m = parse_count(tok, lineno, "number of constraints")?;
                phase = Phase::NBlocks;
            }
            Phase::NBlocks => {
                let tok = toks.first().ok_or_else(|| SdpaError::parse(lineno, "expected nblocks"))?;
                nblocks = parse_count(tok, lineno, "number of blocks")?;
                phase = Phase::Sizes;
            }
            Phase::Sizes => {
                for tok in toks {
                    if sizes.len() == nblocks {
                        break;
                    }
                    let s = tok
                        .parse::<i64>()
                        .map_err(|_| SdpaError::parse(lineno, format!("malformed block size `{tok}`")))?;
                    if s == 0 {
                        return Err(SdpaError::parse(lineno, "block size must be nonzero"));
                    }
                    sizes.push(s);
                }
            }
            Phase::Rhs => {
                for tok in toks {
                    if rhs.len() == m {
                        break;
                    }
                    rhs.push(parse_value(tok, lineno)?);
                }
            }
            Phase::Entries => {
                if toks.len() != 5 {
                    return Err(SdpaError::parse(
                        lineno,
                        format!("expected `matno blkno i j value`, found {} fields", toks.len()),
                    ));
                }
                let matno = parse_count(toks[0], lineno, "matrix number")?;
                let block = parse_count(toks[1], lineno, "block number")?;
                let i = parse_count(toks[2], lineno, "row index")?;
                let j = parse_count(toks[3], lineno, "column index")?;
                let value = parse_value(toks[4], lineno)?;
                if matno > m {
                    return Err(SdpaError::BadMatno { line: lineno, matno, m });
                }
                let (i, j) = check_entry(&structure, lineno, block, i, j)?;
                if !seen.insert((matno, block, i, j)) {
                    return Err(SdpaError::DuplicateEntry {
                        line: lineno,
                        matno: matno.to_string(),
                        block,
                        row: i,
                        col: j,
                    });
                }
                if value != 0.0 {
                    entries[matno].push(Entry::new(block, i, j, value));
                }
            }
        }
        // zero-length sections are complete as soon as they start
        if matches!(phase, Phase::Sizes) && sizes.len() == nblocks {
            structure = BlockStructure::new(std::mem::take(&mut sizes)).map_err(|e| SdpaError::from_model(lineno, e))?;
            phase = Phase::Rhs;
        }
        if matches!(phase, Phase::Rhs) && rhs.len() == m {
            entries = vec![Vec::new(); m + 1];
            phase = Phase::Entries;
        }
    }

    let missing = match phase {
        Phase::M => Some("number of constraints"),
        Phase::NBlocks => Some("number of blocks"),
        Phase::Sizes => Some("block sizes"),
        Phase::Rhs => Some("right-hand side"),
        Phase::Entries => None,
    };
    if let Some(what) = missing {
        return Err(SdpaError::parse(last_line.max(1), format!("unexpected end of input while reading {what}")));
    }

    let mut mats = entries
        .into_iter()
        .map(|es| SymBlockMatrix::from_entries(structure.clone(), es))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SdpaError::from_model(last_line, e))?;
    let objective = mats.remove(0);
    SdpInstance::new(structure, objective, mats, rhs, label_lines.join("\n"))
        .map_err(|e| SdpaError::from_model(last_line, e))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_instance(inst: &SdpInstance) -> String {
    let mut out = String::new();
    if !inst.label.is_empty() {
        for l in inst.label.lines() {
            let _ = writeln!(out, "\" {l}");
        }
    }
    let _ = writeln!(out, "{}", inst.m());
    let _ = writeln!(out, "{}", inst.structure.num_blocks());
    let sizes: Vec<String> = inst.structure.sizes().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let rhs: Vec<String> = inst.rhs.iter().map(|&b| format_value(b)).collect();
    let _ = writeln!(out, "{}", rhs.join(" "));
    for (k, mat) in std::iter::once(&inst.objective).chain(&inst.constraints).enumerate() {
        for e in mat.entries() {
            let _ = writeln!(out, "{} {} {} {} {}", k, e.block, e.row, e.col, format_value(e.value));
        }
    }
    out
}

/// A candidate primal/dual point. Absent parts stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub y: Option<Vec<f64>>,
    pub x: Option<SymBlockMatrix>,
    pub s: Option<SymBlockMatrix>,
}

impl SolutionFile {
    pub fn empty() -> Self {
        SolutionFile { y: None, x: None, s: None }
    }

    /// `X` as a dense block matrix, zero when absent.
    pub fn x_dense(&self, structure: &BlockStructure) -> DenseBlockMatrix {
        match &self.x {
            Some(x) => x.to_dense(),
            None => DenseBlockMatrix::zeros(structure),
        }
    }
}

pub fn parse_solution_str(text: &str, structure: &BlockStructure, m: usize) -> Result<SolutionFile, SdpaError> {
    parse_solution(text.as_bytes(), structure, m)
}

pub fn parse_solution<R: BufRead>(reader: R, structure: &BlockStructure, m: usize) -> Result<SolutionFile, SdpaError> {
    let mut y: Option<Vec<f64>> = None;
    let mut x: Option<Vec<Entry>> = None;
    let mut s: Option<Vec<Entry>> = None;
    let mut seen: HashSet<(bool, usize, usize, usize)> = HashSet::new();
    let mut last_line = 0;

    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        last_line = lineno;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks[0] {
            "y" => {
                if y.is_some() {
                    return Err(SdpaError::parse(lineno, "duplicate `y` line"));
                }
                if toks.len() - 1 != m {
                    return Err(SdpaError::parse(lineno, format!("expected {m} values for y, found {}", toks.len() - 1)));
                }
                y = Some(toks[1..].iter().map(|t| parse_value(t, lineno)).collect::<Result<_, _>>()?);
            }
            tag @ ("X" | "S") => {
                if toks.len() != 5 {
                    return Err(SdpaError::parse(
                        lineno,
                        format!("expected `{tag} blk i j value`, found {} fields", toks.len()),
                    ));
                }
                let block = parse_count(toks[1], lineno, "block number")?;
                let i = parse_count(toks[2], lineno, "row index")?;
                let j = parse_count(toks[3], lineno, "column index")?;
                let value = parse_value(toks[4], lineno)?;
                let (i, j) = check_entry(structure, lineno, block, i, j)?;
                let is_x = tag == "X";
                if !seen.insert((is_x, block, i, j)) {
                    return Err(SdpaError::DuplicateEntry { line: lineno, matno: tag.to_string(), block, row: i, col: j });
                }
                let target = if is_x { &mut x } else { &mut s };
                target.get_or_insert_with(Vec::new).push(Entry::new(block, i, j, value));
            }
            other => return Err(SdpaError::parse(lineno, format!("unknown record `{other}`"))),
        }
    }

    let build = |es: Option<Vec<Entry>>| {
        es.map(|es| SymBlockMatrix::from_entries(structure.clone(), es))
            .transpose()
            .map_err(|e| SdpaError::from_model(last_line, e))
    };
    Ok(SolutionFile { y, x: build(x)?, s: build(s)? })
}

pub fn write_solution(sol: &SolutionFile) -> String {
    let mut out = String::new();
    if let Some(y) = &sol.y {
        let vals: Vec<String> = y.iter().map(|&v| format_value(v)).collect();
        if vals.is_empty() {
            out.push_str("y\n");
        } else {
            let _ = writeln!(out, "y {}", vals.join(" "));
        }
    }
    for (tag, mat) in [("X", &sol.x), ("S", &sol.s)] {
        if let Some(mat) = mat {
            for e in mat.entries() {
                let _ = writeln!(out, "{tag} {} {} {} {}", e.block, e.row, e.col, format_value(e.value));
            }
        }
    }
    out
}
