//! Dependency graph over workbook cells.
//!
//! Nodes are every cell with content plus every input-schema cell (which may
//! be blank until bound). Node ids follow (sheet index, row, column) order,
//! so a min-heap over ids gives the deterministic tie-break for the
//! topological order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use super::ast::{BinOp, Expr, Function, RangeRef, Reference};
use super::cellref::CellRef;
use super::model::{Addr, Cell, WorkbookModel};
use super::value::{ErrorKind, Value};

pub type NodeId = u32;

/// Public view of the dependency structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DepGraph {
    pub nodes: Vec<CellRef>,
    /// `(dependent, precedent)` pairs, sorted.
    pub edges: Vec<(CellRef, CellRef)>,
    pub topo_order: Vec<CellRef>,
    /// Strongly connected components with more than one node or a self-loop,
    /// each sorted, ordered by their first member.
    pub cycles: Vec<Vec<CellRef>>,
}

impl DepGraph {
    pub fn in_cycle(&self, r: &CellRef) -> bool {
        self.cycles.iter().any(|c| c.contains(r))
    }
}

/// Reference resolved against the node table.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Slot {
    Node(NodeId),
    /// A cell that has no content and can never receive any.
    Blank,
    /// Reference to a sheet that does not exist.
    BadRef,
}

/// Expression with references resolved to node ids.
#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Lit(Value),
    Cell(Slot),
    /// Existing member nodes in row-major order.
    Range(Vec<NodeId>),
    BadRange,
    Neg(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Call(Function, Vec<CExpr>),
}

#[derive(Debug, Clone)]
pub(crate) enum NodeKind {
    Literal(Value),
    Formula(CExpr),
    /// Input cell with no literal in the workbook.
    EmptySlot,
}

/// Immutable, shareable compiled form of a workbook.
#[derive(Debug)]
pub struct CompiledModel {
    pub(crate) model: WorkbookModel,
    pub(crate) cells: Vec<CellRef>,
    pub(crate) kinds: Vec<NodeKind>,
    pub(crate) index: HashMap<(u32, Addr), NodeId>,
    pub(crate) deps: Vec<Vec<NodeId>>,
    pub(crate) dependents: Vec<Vec<NodeId>>,
    pub(crate) in_cycle: Vec<bool>,
    pub(crate) topo: Vec<NodeId>,
    pub(crate) topo_pos: Vec<u32>,
    pub(crate) cycles: Vec<Vec<NodeId>>,
    pub(crate) inputs: HashMap<String, (NodeId, usize)>,
}

struct Resolver<'a> {
    model: &'a WorkbookModel,
    per_sheet: Vec<BTreeMap<Addr, NodeId>>,
}

impl Resolver<'_> {
    fn sheet_of(&self, sheet: &Option<String>, home: usize) -> Option<usize> {
        match sheet {
            None => Some(home),
            Some(name) => self.model.sheet_index(name),
        }
    }

    fn cell(&self, r: &CellRef, home: usize) -> Slot {
        match self.sheet_of(&r.sheet, home) {
            None => Slot::BadRef,
            Some(s) => match self.per_sheet[s].get(&Addr::new(r.col, r.row)) {
                Some(id) => Slot::Node(*id),
                None => Slot::Blank,
            },
        }
    }

    fn range(&self, r: &RangeRef, home: usize) -> Option<Vec<NodeId>> {
        let s = self.sheet_of(&r.sheet, home)?;
        let lo = Addr::new(r.start.0, r.start.1);
        let hi = Addr::new(r.end.0, r.end.1);
        Some(
            self.per_sheet[s]
                .range(lo..=hi)
                .filter(|(a, _)| r.contains(a.col, a.row))
                .map(|(_, id)| *id)
                .collect(),
        )
    }

    fn compile(&self, e: &Expr, home: usize) -> CExpr {
        match e {
            Expr::Number(n) => CExpr::Lit(Value::Number(*n)),
            Expr::Text(s) => CExpr::Lit(Value::Text(s.clone())),
            Expr::Bool(b) => CExpr::Lit(Value::Bool(*b)),
            Expr::Error(k) => CExpr::Lit(Value::Error(*k)),
            Expr::Ref(r) => CExpr::Cell(self.cell(r, home)),
            Expr::Range(r) => match self.range(r, home) {
                Some(ids) => CExpr::Range(ids),
                None => CExpr::BadRange,
            },
            Expr::Neg(x) => CExpr::Neg(Box::new(self.compile(x, home))),
            Expr::Binary(op, l, r) => CExpr::Bin(
                *op,
                Box::new(self.compile(l, home)),
                Box::new(self.compile(r, home)),
            ),
            Expr::Call(f, args) => {
                CExpr::Call(f.clone(), args.iter().map(|a| self.compile(a, home)).collect())
            }
        }
    }
}

impl CompiledModel {
    /// Resolves references, builds the graph, finds cycles and fixes the
    /// evaluation order.
    pub fn compile(model: WorkbookModel) -> CompiledModel {
        let mut slots: BTreeMap<(usize, Addr), Option<&Cell>> = BTreeMap::new();
        for (si, sheet) in model.sheets.iter().enumerate() {
            for (addr, cell) in &sheet.cells {
                slots.insert((si, *addr), Some(cell));
            }
        }
        for f in &model.input_schema {
            if let Some(si) = f.cell.sheet.as_deref().and_then(|s| model.sheet_index(s)) {
                slots
                    .entry((si, Addr::new(f.cell.col, f.cell.row)))
                    .or_insert(None);
            }
        }

        let mut per_sheet = vec![BTreeMap::new(); model.sheets.len()];
        let mut cells = Vec::with_capacity(slots.len());
        let mut index = HashMap::with_capacity(slots.len());
        for (id, (si, addr)) in slots.keys().enumerate() {
            let id = id as NodeId;
            per_sheet[*si].insert(*addr, id);
            index.insert((*si as u32, *addr), id);
            cells.push(CellRef::new(Some(&model.sheets[*si].name), addr.col, addr.row));
        }

        let resolver = Resolver {
            model: &model,
            per_sheet,
        };
        let mut kinds = Vec::with_capacity(slots.len());
        let mut deps = Vec::with_capacity(slots.len());
        for ((si, _), cell) in &slots {
            match cell {
                Some(Cell::Literal(v)) => {
                    kinds.push(NodeKind::Literal(v.clone()));
                    deps.push(Vec::new());
                }
                None => {
                    kinds.push(NodeKind::EmptySlot);
                    deps.push(Vec::new());
                }
                Some(Cell::Formula { expr, .. }) => {
                    let mut d = Vec::new();
                    expr.for_each_reference(&mut |r| match r {
                        Reference::Cell(c) => {
                            if let Slot::Node(id) = resolver.cell(c, *si) {
                                d.push(id);
                            }
                        }
                        Reference::Range(rr) => {
                            if let Some(ids) = resolver.range(rr, *si) {
                                d.extend(ids);
                            }
                        }
                    });
                    d.sort_unstable();
                    d.dedup();
                    deps.push(d);
                    kinds.push(NodeKind::Formula(resolver.compile(expr, *si)));
                }
            }
        }
        drop(resolver);

        let n = kinds.len();
        let mut dependents = vec![Vec::new(); n];
        for (node, ds) in deps.iter().enumerate() {
            for &d in ds {
                dependents[d as usize].push(node as NodeId);
            }
        }

        let sccs = strongly_connected(&deps);
        let mut in_cycle = vec![false; n];
        let mut cycles = Vec::new();
        for comp in sccs {
            let cyclic = comp.len() > 1 || deps[comp[0] as usize].contains(&comp[0]);
            if cyclic {
                for &m in &comp {
                    in_cycle[m as usize] = true;
                }
                let mut c = comp;
                c.sort_unstable();
                cycles.push(c);
            }
        }
        cycles.sort();

        // Kahn over acyclic nodes; cycle members are treated as already done.
        let mut pending: Vec<usize> = deps
            .iter()
            .map(|ds| ds.iter().filter(|d| !in_cycle[**d as usize]).count())
            .collect();
        let mut heap: BinaryHeap<Reverse<NodeId>> = (0..n)
            .filter(|&i| !in_cycle[i] && pending[i] == 0)
            .map(|i| Reverse(i as NodeId))
            .collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(Reverse(id)) = heap.pop() {
            topo.push(id);
            for &dep in &dependents[id as usize] {
                let dep_us = dep as usize;
                if in_cycle[dep_us] {
                    continue;
                }
                pending[dep_us] -= 1;
                if pending[dep_us] == 0 {
                    heap.push(Reverse(dep));
                }
            }
        }
        debug_assert_eq!(topo.len() + in_cycle.iter().filter(|c| **c).count(), n);
        let mut topo_pos = vec![u32::MAX; n];
        for (pos, id) in topo.iter().enumerate() {
            topo_pos[*id as usize] = pos as u32;
        }

        let inputs = model
            .input_schema
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                let si = model.sheet_index(f.cell.sheet.as_deref()?)?;
                let id = index[&(si as u32, Addr::new(f.cell.col, f.cell.row))];
                Some((f.name.clone(), (id, i)))
            })
            .collect();

        CompiledModel {
            model,
            cells,
            kinds,
            index,
            deps,
            dependents,
            in_cycle,
            topo,
            topo_pos,
            cycles,
            inputs,
        }
    }

    pub fn model(&self) -> &WorkbookModel {
        &self.model
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub(crate) fn node_of(&self, r: &CellRef) -> Option<NodeId> {
        let si = self.model.sheet_index(r.sheet.as_deref()?)?;
        self.index.get(&(si as u32, Addr::new(r.col, r.row))).copied()
    }

    pub fn graph(&self) -> DepGraph {
        let name = |id: &NodeId| self.cells[*id as usize].clone();
        let mut edges: Vec<(CellRef, CellRef)> = Vec::new();
        for (node, ds) in self.deps.iter().enumerate() {
            for d in ds {
                edges.push((self.cells[node].clone(), name(d)));
            }
        }
        edges.sort();
        DepGraph {
            nodes: self.cells.clone(),
            edges,
            topo_order: self.topo.iter().map(name).collect(),
            cycles: self
                .cycles
                .iter()
                .map(|c| c.iter().map(name).collect())
                .collect(),
        }
    }
}

/// Builds the dependency graph of a parsed workbook.
pub fn build_dependency_graph(model: &WorkbookModel) -> DepGraph {
    CompiledModel::compile(model.clone()).graph()
}

/// Iterative Tarjan SCC; deep reference chains must not overflow the stack.
fn strongly_connected(adj: &[Vec<NodeId>]) -> Vec<Vec<NodeId>> {
    const UNSEEN: u32 = u32::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<NodeId> = Vec::new();
    let mut out = Vec::new();
    let mut next = 0u32;
    let mut call: Vec<(NodeId, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root as NodeId, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root as NodeId);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            let vu = v as usize;
            if let Some(&w) = adj[vu].get(*child) {
                *child += 1;
                let wu = w as usize;
                if index[wu] == UNSEEN {
                    index[wu] = next;
                    low[wu] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[wu] = true;
                    call.push((w, 0));
                } else if on_stack[wu] {
                    low[vu] = low[vu].min(index[wu]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                let pu = parent as usize;
                low[pu] = low[pu].min(low[vu]);
            }
            if low[vu] == index[vu] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w as usize] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}

pub(crate) fn cycle_value() -> Value {
    Value::Error(ErrorKind::Cycle)
}
