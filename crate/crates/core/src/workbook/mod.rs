//! Workbook data model, formula language and incremental recalculation.

mod ast;
mod cellref;
mod eval;
mod graph;
mod model;
mod parser;
mod session;
mod validate;

pub use ast::{BinOp, Expr, Function, RangeRef, Reference, VOLATILE_FUNCTIONS};
pub use cellref::{column_index, column_name, parse_a1, BadCellRef, CellRef, MAX_COLUMN, MAX_ROW};
pub use graph::{build_dependency_graph, CompiledModel, DepGraph};
pub use model::{
    parse_workbook, valid_model_name, Addr, Cell, InputField, OutputField, Sheet, WorkbookModel,
};
pub use parser::{parse_formula, print_formula, ParseError, ParseErrorKind, MAX_RANGE_CELLS};
pub use session::{evaluate_all, CellValues, InputHandle, Interrupt, Meter, RecalcError, Session};
pub use validate::{validate_inputs, validate_inputs_with, ValidationReport, Violation, ViolationKind};
pub use value::{DType, ErrorKind, Value};

mod value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkbookError {
    #[error("malformed workbook document: {0}")]
    Format(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("formula error in {cell} at offset {pos}: {message}")]
    Parse {
        cell: CellRef,
        pos: usize,
        message: String,
    },
}

impl WorkbookError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkbookError::Format(_) => "FORMAT",
            WorkbookError::Schema(_) => "SCHEMA",
            WorkbookError::Parse { .. } => "PARSE",
        }
    }
}
