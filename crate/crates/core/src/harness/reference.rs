use super::config::{ReferenceKind, Run};
use super::registry::Base;
use crate::error::{Error, Result};
use crate::physics::ExprField;
use crate::sampling::{sample_interior_grid, ObservationSet};
use crate::tensor::Tensor;

const BURGERS_TABLE: &str = include_str!("../../data/burgers_reference.csv");

/// The bundled Burgers table, after checking its declared row count.
pub fn bundled_burgers() -> Result<ObservationSet> {
    let declared = BURGERS_TABLE
        .lines()
        .filter_map(|l| l.strip_prefix("# rows:"))
        .map(|n| n.trim().parse::<usize>())
        .next()
        .ok_or_else(|| Error::Observations("bundled table: no row-count declaration".into()))?
        .map_err(|e| Error::Observations(format!("bundled table: {e}")))?;
    let set = ObservationSet::parse_csv(BURGERS_TABLE.as_bytes(), "burgers_reference.csv", true, 1, 1)?;
    if set.len() != declared {
        return Err(Error::Observations(format!(
            "bundled table declares {declared} rows, has {}",
            set.len()
        )));
    }
    Ok(set)
}

/// Reference values for a resolved run, or `None` when the config disables it.
pub fn make_reference(run: &Run) -> Result<Option<ObservationSet>> {
    let spec = &run.config.reference;
    let layout = run.problem.layout();
    let kind = spec.kind.unwrap_or(if run.solution.is_some() {
        ReferenceKind::Analytic
    } else if run.def.base == Base::Burgers {
        ReferenceKind::Bundled
    } else {
        ReferenceKind::None
    });
    match kind {
        ReferenceKind::None => Ok(None),
        ReferenceKind::Bundled => {
            if run.def.base != Base::Burgers {
                return Err(Error::NoReference(run.def.id.to_string()));
            }
            Ok(Some(bundled_burgers()?))
        }
        ReferenceKind::File => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("[reference] kind = \"file\" needs a path".into()))?;
            let set = ObservationSet::read_csv(path, layout.has_time, layout.space_dim, 1)?;
            Ok(Some(set))
        }
        ReferenceKind::Analytic => {
            let u = run.solution.as_ref().ok_or_else(|| Error::NoReference(run.def.id.to_string()))?;
            if spec.points_per_axis == 0 {
                return Err(Error::Config("points_per_axis must be positive".into()));
            }
            let counts = vec![spec.points_per_axis; run.problem.domain.ncols()];
            let grid = sample_interior_grid(&run.problem.domain, &counts)?;
            let points = if run.problem.meta.is_empty() {
                grid
            } else {
                let values = spec.meta_values.as_deref().unwrap_or_default();
                let blocks: Vec<Tensor> = values.iter().map(|&v| with_meta_value(&grid, v)).collect();
                stack_rows(&blocks)?
            };
            let values = ExprField { expr: u, layout: &layout }.eval_tensor(&points)?;
            Ok(Some(ObservationSet::new(points, values, "analytic")?))
        }
    }
}

/// Appends a constant meta column.
pub fn with_meta_value(grid: &Tensor, v: f64) -> Tensor {
    let col = Tensor::full(&[grid.nrows(), 1], v);
    Tensor::concat_last(&[grid.clone(), col])
}

pub fn stack_rows(blocks: &[Tensor]) -> Result<Tensor> {
    let cols = blocks.first().map(Tensor::ncols).ok_or_else(|| Error::Config("nothing to stack".into()))?;
    let mut data = Vec::new();
    for b in blocks {
        data.extend_from_slice(b.data());
    }
    Tensor::new(&[data.len() / cols, cols], data)
}

/// Every `stride`-th reference row, at most `max_rows` of them.
pub(crate) fn validation_subset(reference: &ObservationSet, max_rows: usize) -> Result<ObservationSet> {
    let n = reference.len();
    let stride = n.div_ceil(max_rows.max(1)).max(1);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    ObservationSet::new(
        reference.points.select_rows(&rows),
        reference.values.select_rows(&rows),
        "validation",
    )
}
