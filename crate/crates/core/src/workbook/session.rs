use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::cellref::CellRef;
use super::eval::Evaluator;
use super::graph::{cycle_value, CompiledModel, NodeId, NodeKind};
use super::model::{OutputField, WorkbookModel};
use super::value::{DType, ErrorKind, Value};

pub type CellValues = BTreeMap<CellRef, Value>;

/// Why an evaluation stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Interrupt {
    #[error("step budget of {0} cell evaluations exceeded")]
    BudgetExceeded(u64),
    #[error("evaluation cancelled")]
    Cancelled,
}

#[derive(Debug)]
struct MeterShared {
    steps: AtomicU64,
    budget: u64,
    cancelled: AtomicBool,
    cell_delay: Option<Duration>,
}

/// Cooperative step counter shared by every session of one job. Each
/// formula evaluation is one step.
#[derive(Debug, Clone)]
pub struct Meter {
    shared: Arc<MeterShared>,
}

impl Default for Meter {
    fn default() -> Self {
        Meter::unlimited()
    }
}

impl Meter {
    pub fn unlimited() -> Meter {
        Meter::new(u64::MAX, None)
    }

    /// `cell_delay` slows every formula evaluation down; it exists to
    /// simulate a hanging model in tests.
    pub fn new(budget: u64, cell_delay: Option<Duration>) -> Meter {
        Meter {
            shared: Arc::new(MeterShared {
                steps: AtomicU64::new(0),
                budget,
                cancelled: AtomicBool::new(false),
                cell_delay,
            }),
        }
    }

    pub fn cancel(&self) {
        self.shared.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.shared.cancelled.load(Ordering::Relaxed)
    }

    pub fn steps(&self) -> u64 {
        self.shared.steps.load(Ordering::Relaxed)
    }

    pub fn check(&self) -> Result<(), Interrupt> {
        if self.is_cancelled() {
            return Err(Interrupt::Cancelled);
        }
        Ok(())
    }

    #[inline]
    fn tick(&self) -> Result<(), Interrupt> {
        self.check()?;
        let n = self.shared.steps.fetch_add(1, Ordering::Relaxed) + 1;
        if n > self.shared.budget {
            return Err(Interrupt::BudgetExceeded(self.shared.budget));
        }
        if let Some(d) = self.shared.cell_delay {
            std::thread::sleep(d);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecalcError {
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("input `{0}` is locked")]
    LockedInput(String),
    #[error(transparent)]
    Interrupted(#[from] Interrupt),
}

/// Pre-resolved handle to an input cell, for the per-iteration hot path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputHandle(NodeId);

impl CompiledModel {
    /// Handle for an unlocked input field.
    pub fn input_handle(&self, name: &str) -> Result<InputHandle, RecalcError> {
        let (id, field) = self
            .inputs
            .get(name)
            .ok_or_else(|| RecalcError::UnknownInput(name.to_string()))?;
        if self.model.input_schema[*field].locked {
            return Err(RecalcError::LockedInput(name.to_string()));
        }
        Ok(InputHandle(*id))
    }
}

/// Mutable evaluation state over a shared compiled model. One session per
/// concurrent evaluation; clone it to fan out.
#[derive(Debug, Clone)]
pub struct Session {
    model: Arc<CompiledModel>,
    values: Vec<Option<Value>>,
    meter: Meter,
    evaluations: u64,
    dirty: Vec<bool>,
    work: Vec<NodeId>,
    stack: Vec<NodeId>,
}

impl Session {
    /// A session holding the workbook's literal values; formulas are not
    /// evaluated until [`Session::evaluate_all`].
    pub fn new(model: Arc<CompiledModel>, meter: Meter) -> Session {
        let values = model
            .kinds
            .iter()
            .zip(&model.in_cycle)
            .map(|(k, cyc)| match k {
                _ if *cyc => Some(cycle_value()),
                NodeKind::Literal(v) => Some(v.clone()),
                NodeKind::Formula(_) | NodeKind::EmptySlot => None,
            })
            .collect();
        let n = model.node_count();
        Session {
            model,
            values,
            meter,
            evaluations: 0,
            dirty: vec![false; n],
            work: Vec::new(),
            stack: Vec::new(),
        }
    }

    pub fn compiled(&self) -> &Arc<CompiledModel> {
        &self.model
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    /// Formula evaluations performed by this session so far.
    pub fn formula_evaluations(&self) -> u64 {
        self.evaluations
    }

    fn eval_node(&mut self, id: NodeId) -> Result<(), Interrupt> {
        let NodeKind::Formula(expr) = &self.model.kinds[id as usize] else {
            return Ok(());
        };
        self.meter.tick()?;
        let v = Evaluator {
            values: &self.values,
        }
        .formula(expr);
        self.values[id as usize] = Some(v);
        self.evaluations += 1;
        Ok(())
    }

    /// Recomputes every acyclic formula in topological order.
    pub fn evaluate_all(&mut self) -> Result<(), Interrupt> {
        let model = Arc::clone(&self.model);
        for &id in &model.topo {
            self.eval_node(id)?;
        }
        Ok(())
    }

    pub fn resolve_input(&self, name: &str) -> Result<InputHandle, RecalcError> {
        self.model.input_handle(name)
    }

    /// Writes the bindings into their input cells and re-evaluates only the
    /// transitive dependents of cells whose value changed.
    pub fn set_inputs(&mut self, bindings: &BTreeMap<String, Value>) -> Result<(), RecalcError> {
        let mut writes = Vec::with_capacity(bindings.len());
        for (name, v) in bindings {
            writes.push((self.binding_target(name, v)?, v.clone()));
        }
        self.set_input_values(writes)?;
        Ok(())
    }

    /// Writes the bindings without recalculating, then evaluates every
    /// formula once. Cheaper than [`Session::evaluate_all`] followed by
    /// [`Session::set_inputs`] on a fresh session.
    pub fn bind_and_evaluate(&mut self, bindings: &BTreeMap<String, Value>) -> Result<(), RecalcError> {
        for (name, v) in bindings {
            let InputHandle(id) = self.binding_target(name, v)?;
            self.values[id as usize] = Some(v.clone());
        }
        self.evaluate_all()?;
        Ok(())
    }

    fn binding_target(&self, name: &str, v: &Value) -> Result<InputHandle, RecalcError> {
        let (id, field) = self
            .model
            .inputs
            .get(name)
            .ok_or_else(|| RecalcError::UnknownInput(name.to_string()))?;
        let f = &self.model.model.input_schema[*field];
        if f.locked && f.default.as_ref() != Some(v) {
            return Err(RecalcError::LockedInput(name.to_string()));
        }
        Ok(InputHandle(*id))
    }

    pub fn set_input_values(
        &mut self,
        writes: impl IntoIterator<Item = (InputHandle, Value)>,
    ) -> Result<(), Interrupt> {
        for (InputHandle(id), v) in writes {
            let slot = &mut self.values[id as usize];
            if slot.as_ref() == Some(&v) {
                continue;
            }
            *slot = Some(v);
            self.stack.push(id);
        }
        self.recalc_dirty()
    }

    fn recalc_dirty(&mut self) -> Result<(), Interrupt> {
        let model = Arc::clone(&self.model);
        let mut work = std::mem::take(&mut self.work);
        while let Some(id) = self.stack.pop() {
            for &dep in &model.dependents[id as usize] {
                let d = dep as usize;
                if !self.dirty[d] {
                    self.dirty[d] = true;
                    self.stack.push(dep);
                    work.push(dep);
                }
            }
        }
        for &id in &work {
            self.dirty[id as usize] = false;
        }
        // cycle members keep their #CYCLE! value
        work.retain(|id| !model.in_cycle[*id as usize]);
        work.sort_unstable_by_key(|id| model.topo_pos[*id as usize]);
        let mut result = Ok(());
        for &id in &work {
            if let Err(e) = self.eval_node(id) {
                result = Err(e);
                break;
            }
        }
        work.clear();
        self.work = work;
        result
    }

    /// Current value of a cell; `None` for blank cells.
    pub fn value(&self, r: &CellRef) -> Option<&Value> {
        self.values[self.model.node_of(r)? as usize].as_ref()
    }

    pub fn cell_values(&self) -> CellValues {
        self.model
            .cells
            .iter()
            .zip(&self.values)
            .filter_map(|(r, v)| Some((r.clone(), v.clone()?)))
            .collect()
    }

    /// Output values by name. Errors pass through; blank cells read as the
    /// zero value of the declared type.
    pub fn extract_outputs(&self, schema: &[OutputField]) -> BTreeMap<String, Value> {
        schema
            .iter()
            .map(|f| {
                let v = match f.cell.sheet.as_deref().and_then(|s| self.model.model.sheet_index(s)) {
                    None => Value::Error(ErrorKind::Ref),
                    Some(_) => match self.value(&f.cell) {
                        Some(v) => v.clone(),
                        None => match f.dtype {
                            DType::Number => Value::Number(0.0),
                            DType::Text => Value::Text(String::new()),
                            DType::Boolean => Value::Bool(false),
                        },
                    },
                };
                (f.name.clone(), v)
            })
            .collect()
    }

    pub fn outputs(&self) -> BTreeMap<String, Value> {
        self.extract_outputs(&self.model.model.output_schema)
    }
}

/// One-shot full evaluation of a workbook.
pub fn evaluate_all(model: &WorkbookModel) -> Result<CellValues, Interrupt> {
    let compiled = Arc::new(CompiledModel::compile(model.clone()));
    let mut s = Session::new(compiled, Meter::unlimited());
    s.evaluate_all()?;
    Ok(s.cell_values())
}
