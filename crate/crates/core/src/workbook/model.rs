use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ast::Expr;
use super::cellref::{column_name, parse_a1, CellRef};
use super::parser::{parse_formula, ParseErrorKind};
use super::value::{DType, Value};
use super::WorkbookError;

/// Row-major cell address within a sheet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Addr {
    pub row: u32,
    pub col: u32,
}

impl Addr {
    pub fn new(col: u32, row: u32) -> Addr {
        Addr { row, col }
    }

    pub fn a1(&self) -> String {
        format!("{}{}", column_name(self.col), self.row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Literal(Value),
    Formula { source: String, expr: Expr },
}

impl Cell {
    pub fn formula(source: &str) -> Result<Cell, super::parser::ParseError> {
        Ok(Cell::Formula {
            source: source.to_string(),
            expr: parse_formula(source)?,
        })
    }

    pub fn is_formula(&self) -> bool {
        matches!(self, Cell::Formula { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    pub name: String,
    pub cells: BTreeMap<Addr, Cell>,
}

impl Sheet {
    pub fn new(name: &str) -> Sheet {
        Sheet {
            name: name.to_string(),
            cells: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputField {
    pub name: String,
    pub cell: CellRef,
    pub dtype: DType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default)]
    pub locked: bool,
}

impl InputField {
    pub fn number(name: &str, cell: &str) -> InputField {
        InputField {
            name: name.to_string(),
            cell: parse_a1(cell).expect("valid cell reference"),
            dtype: DType::Number,
            required: false,
            min: None,
            max: None,
            default: None,
            locked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputField {
    pub name: String,
    pub cell: CellRef,
    pub dtype: DType,
}

impl OutputField {
    pub fn new(name: &str, cell: &str, dtype: DType) -> OutputField {
        OutputField {
            name: name.to_string(),
            cell: parse_a1(cell).expect("valid cell reference"),
            dtype,
        }
    }
}

/// A workbook: ordered sheets plus the declared input and output schemas.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkbookModel {
    pub name: String,
    pub sheets: Vec<Sheet>,
    pub input_schema: Vec<InputField>,
    pub output_schema: Vec<OutputField>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocCell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocSheet {
    name: String,
    cells: BTreeMap<String, DocCell>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    name: String,
    sheets: Vec<DocSheet>,
    #[serde(default)]
    inputs: Vec<InputField>,
    #[serde(default)]
    outputs: Vec<OutputField>,
}

pub(crate) fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Model names end up in URLs and file names.
pub fn valid_model_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.starts_with('.')
}

fn valid_sheet_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ')
}

/// Parses and validates a workbook document.
pub fn parse_workbook(bytes: &[u8]) -> Result<WorkbookModel, WorkbookError> {
    let doc: Document =
        serde_json::from_slice(bytes).map_err(|e| WorkbookError::Format(e.to_string()))?;
    let mut sheets = Vec::with_capacity(doc.sheets.len());
    for ds in doc.sheets {
        let mut sheet = Sheet::new(&ds.name);
        for (key, dc) in ds.cells {
            let r = parse_a1(&key).map_err(|e| WorkbookError::Format(e.to_string()))?;
            if r.sheet.is_some() || key.contains('$') {
                return Err(WorkbookError::Format(format!(
                    "cell key `{key}` on sheet `{}` must be a plain A1 address",
                    ds.name
                )));
            }
            let addr = Addr::new(r.col, r.row);
            let cell = match (dc.v, dc.f) {
                (Some(v), None) => Cell::Literal(v),
                (None, Some(src)) => match parse_formula(&src) {
                    Ok(expr) => Cell::Formula { source: src, expr },
                    Err(e) if e.kind == ParseErrorKind::RangeTooLarge => {
                        return Err(WorkbookError::Schema(format!(
                            "{}!{}: {}",
                            ds.name,
                            addr.a1(),
                            e.message
                        )))
                    }
                    Err(e) => {
                        return Err(WorkbookError::Parse {
                            cell: CellRef::new(Some(&ds.name), addr.col, addr.row),
                            pos: e.pos,
                            message: e.message,
                        })
                    }
                },
                _ => {
                    return Err(WorkbookError::Format(format!(
                        "cell {}!{key} must have exactly one of `v` or `f`",
                        ds.name
                    )))
                }
            };
            sheet.cells.insert(addr, cell);
        }
        sheets.push(sheet);
    }
    let model = WorkbookModel {
        name: doc.name,
        sheets,
        input_schema: doc.inputs,
        output_schema: doc.outputs,
    };
    model.validate()?;
    Ok(model)
}

fn check_field_value(field: &InputField, v: &Value) -> Result<(), String> {
    if v.dtype() != Some(field.dtype) {
        return Err(format!("expected {}, got {v}", field.dtype));
    }
    if let Value::Number(n) = v {
        if field.min.is_some_and(|m| *n < m) || field.max.is_some_and(|m| *n > m) {
            return Err(format!("{n} outside bounds"));
        }
    }
    Ok(())
}

impl WorkbookModel {
    pub fn new(name: &str) -> WorkbookModel {
        WorkbookModel {
            name: name.to_string(),
            sheets: Vec::new(),
            input_schema: Vec::new(),
            output_schema: Vec::new(),
        }
    }

    pub fn sheet_index(&self, name: &str) -> Option<usize> {
        self.sheets.iter().position(|s| s.name == name)
    }

    pub fn cell(&self, r: &CellRef) -> Option<&Cell> {
        let sheet = self.sheets.get(self.sheet_index(r.sheet.as_deref()?)?)?;
        sheet.cells.get(&Addr::new(r.col, r.row))
    }

    pub fn input_field(&self, name: &str) -> Option<&InputField> {
        self.input_schema.iter().find(|f| f.name == name)
    }

    pub fn formula_count(&self) -> usize {
        self.sheets
            .iter()
            .map(|s| s.cells.values().filter(|c| c.is_formula()).count())
            .sum()
    }

    /// Checks every structural and schema invariant.
    pub fn validate(&self) -> Result<(), WorkbookError> {
        let schema = |m: String| Err(WorkbookError::Schema(m));
        if !valid_model_name(&self.name) {
            return schema(format!("invalid workbook name `{}`", self.name));
        }
        if self.sheets.is_empty() {
            return schema("workbook has no sheets".into());
        }
        let mut seen = HashSet::new();
        for s in &self.sheets {
            if !valid_sheet_name(&s.name) {
                return schema(format!("invalid sheet name `{}`", s.name));
            }
            if !seen.insert(s.name.as_str()) {
                return schema(format!("duplicate sheet name `{}`", s.name));
            }
        }

        let sheet_of = |r: &CellRef, field: &str| -> Result<(), WorkbookError> {
            match r.sheet.as_deref() {
                None => Err(WorkbookError::Schema(format!(
                    "field `{field}` cell `{r}` must name its sheet"
                ))),
                Some(s) if self.sheet_index(s).is_none() => Err(WorkbookError::Schema(format!(
                    "field `{field}` references missing sheet `{s}`"
                ))),
                Some(_) => Ok(()),
            }
        };

        let mut names = HashSet::new();
        let mut cells = HashSet::new();
        for f in &self.input_schema {
            if !valid_identifier(&f.name) {
                return schema(format!("invalid input name `{}`", f.name));
            }
            if !names.insert(f.name.as_str()) {
                return schema(format!("duplicate input name `{}`", f.name));
            }
            sheet_of(&f.cell, &f.name)?;
            if !cells.insert(&f.cell) {
                return schema(format!("input cell {} bound twice", f.cell));
            }
            if self.cell(&f.cell).is_some_and(Cell::is_formula) {
                return schema(format!("input `{}` cell {} holds a formula", f.name, f.cell));
            }
            for b in [f.min, f.max].into_iter().flatten() {
                if !b.is_finite() {
                    return schema(format!("input `{}` has a non-finite bound", f.name));
                }
            }
            if f.dtype != DType::Number && (f.min.is_some() || f.max.is_some()) {
                return schema(format!("input `{}` has bounds but is not numeric", f.name));
            }
            if let (Some(lo), Some(hi)) = (f.min, f.max) {
                if lo > hi {
                    return schema(format!("input `{}` has min {lo} > max {hi}", f.name));
                }
            }
            if let Some(d) = &f.default {
                if let Err(why) = check_field_value(f, d) {
                    return schema(format!("input `{}` default invalid: {why}", f.name));
                }
            }
            if f.locked && f.default.is_none() {
                return schema(format!("locked input `{}` needs a default", f.name));
            }
        }

        let mut out_names = HashSet::new();
        for f in &self.output_schema {
            if !valid_identifier(&f.name) {
                return schema(format!("invalid output name `{}`", f.name));
            }
            if !out_names.insert(f.name.as_str()) {
                return schema(format!("duplicate output name `{}`", f.name));
            }
            sheet_of(&f.cell, &f.name)?;
        }
        Ok(())
    }

    fn to_document(&self) -> Document {
        Document {
            name: self.name.clone(),
            sheets: self
                .sheets
                .iter()
                .map(|s| DocSheet {
                    name: s.name.clone(),
                    cells: s
                        .cells
                        .iter()
                        .map(|(addr, c)| {
                            let dc = match c {
                                Cell::Literal(v) => DocCell {
                                    v: Some(v.clone()),
                                    f: None,
                                },
                                Cell::Formula { source, .. } => DocCell {
                                    v: None,
                                    f: Some(source.clone()),
                                },
                            };
                            (addr.a1(), dc)
                        })
                        .collect(),
                })
                .collect(),
            inputs: self.input_schema.clone(),
            outputs: self.output_schema.clone(),
        }
    }

    /// Canonical document bytes; the content address of a model is the
    /// SHA-256 of these bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::canonical::to_vec(&self.to_document())
    }

    pub fn content_hash(&self) -> String {
        crate::canonical::sha256_hex(&self.canonical_bytes())
    }

    /// Builder helper: sets a cell from either `=formula` source or a literal.
    pub fn set(&mut self, sheet: &str, a1: &str, cell: Cell) -> &mut Self {
        let r = parse_a1(a1).expect("valid address");
        let idx = match self.sheet_index(sheet) {
            Some(i) => i,
            None => {
                self.sheets.push(Sheet::new(sheet));
                self.sheets.len() - 1
            }
        };
        self.sheets[idx].cells.insert(Addr::new(r.col, r.row), cell);
        self
    }

    pub fn set_value(&mut self, sheet: &str, a1: &str, v: impl Into<Value>) -> &mut Self {
        self.set(sheet, a1, Cell::Literal(v.into()))
    }

    /// Panics on a syntax error; intended for building fixtures.
    pub fn set_formula(&mut self, sheet: &str, a1: &str, src: &str) -> &mut Self {
        let cell = Cell::formula(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        self.set(sheet, a1, cell)
    }
}
