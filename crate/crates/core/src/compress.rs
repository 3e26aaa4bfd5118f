//! Rank importance, group-aware truncation and byte-budget compression.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{DecomposedField, Keep, RankCount, RankLayout, PLANES};
use crate::io::model_file::serialized_size_with;
use crate::model::FieldPair;
use crate::real::Real;

/// Per-component importance of one field.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub vec_scores: Vec<f64>,
    pub mat_scores: Vec<f64>,
    pub vec_groups: Vec<usize>,
    pub mat_groups: Vec<usize>,
    /// Vector component indices grouped by group, most important first
    /// within each group.
    pub vec_order: Vec<usize>,
    pub mat_order: Vec<usize>,
}

impl ImportanceReport {
    pub fn len(&self) -> usize {
        self.vec_scores.len() + self.mat_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `kind,index,group,score,rank_in_group` per component.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "index", "group", "score", "rank_in_group"])?;
        for (kind, scores, groups, order) in [
            ("vec", &self.vec_scores, &self.vec_groups, &self.vec_order),
            ("mat", &self.mat_scores, &self.mat_groups, &self.mat_order),
        ] {
            for (i, &s) in scores.iter().enumerate() {
                let g = groups[i];
                let pos = order.iter().filter(|&&j| groups[j] == g).position(|&j| j == i).unwrap_or(0);
                w.write_record([kind.to_string(), i.to_string(), g.to_string(), format!("{s:.9e}"), pos.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Indices ordered by group, then by descending score (ties by index).
fn order_within_groups(scores: &[f64], groups: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        groups[a]
            .cmp(&groups[b])
            .then(scores[b].total_cmp(&scores[a]))
            .then(a.cmp(&b))
    });
    idx
}

/// Importance of every component: mean `|S|` over channels times the L2
/// norms of its three vectors (or Frobenius norms of its three planes).
pub fn rank_importance<T: Real>(field: &DecomposedField<T>) -> ImportanceReport {
    let (nv, nm, r, c) = (field.n_vec(), field.n_mat(), field.rank(), field.channels());
    let w = field.weights();
    let mean_abs_s = |col: usize| (0..c).map(|ch| Real::to_f64(w[ch * r + col]).abs()).sum::<f64>() / c as f64;
    let column_norm = |t: &[T], width: usize, col: usize| {
        t.iter()
            .skip(col)
            .step_by(width)
            .map(|&v| v.to_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let vec_scores: Vec<f64> = (0..nv)
        .map(|i| mean_abs_s(i) * (0..3).map(|a| column_norm(field.vec_factor(a), nv, i)).product::<f64>())
        .collect();
    let mat_scores: Vec<f64> = (0..nm)
        .map(|i| mean_abs_s(nv + i) * (0..PLANES.len()).map(|p| column_norm(field.mat_factor(p), nm, i)).product::<f64>())
        .collect();
    let layout = field.layout();
    let (vec_groups, mat_groups) = (layout.vec_groups(), layout.mat_groups());
    ImportanceReport {
        vec_order: order_within_groups(&vec_scores, &vec_groups),
        mat_order: order_within_groups(&mat_scores, &mat_groups),
        vec_scores,
        mat_scores,
        vec_groups,
        mat_groups,
    }
}

/// Components kept by [`sort_and_truncate`]: every group that fits under
/// `target` whole, then the most important components of the next group.
pub fn truncation_plan<T: Real>(field: &DecomposedField<T>, target: RankCount) -> Result<Keep> {
    let layout = field.layout();
    let total = layout.total();
    if target.total() == 0 {
        return Err(Error::InvalidArgument("truncation target keeps no components".into()));
    }
    if !target.fits_in(total) {
        return Err(Error::InvalidArgument(format!("target {target} exceeds the layout total {total}")));
    }
    let full = (0..=layout.num_groups())
        .rev()
        .find(|&m| layout.prefix(m).fits_in(target))
        .unwrap_or(0);
    let base = layout.prefix(full);
    if base == target || full == layout.num_groups() {
        return Ok(Keep::Prefix(base));
    }
    let report = rank_importance(field);
    let partial = layout.groups()[full];
    let pick = |order: &[usize], groups: &[usize], have: usize, want: usize, budget: usize| {
        let mut idx: Vec<usize> = (0..have).collect();
        idx.extend(order.iter().copied().filter(|&i| groups[i] == full).take(want.min(budget)));
        idx
    };
    let vec = pick(&report.vec_order, &report.vec_groups, base.vec, target.vec - base.vec, partial.vec);
    let mat = pick(&report.mat_order, &report.mat_groups, base.mat, target.mat - base.mat, partial.mat);
    if vec.is_empty() && mat.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "target {target} keeps nothing: the first group is {partial} and groups are kept in order"
        )));
    }
    Ok(Keep::Indices { vec, mat })
}

/// Truncates to at most `target` components without retraining.
///
/// A target below the partial group's reach keeps what that group has, so
/// the result can hold fewer components of one kind than requested.
pub fn sort_and_truncate<T: Real>(field: &DecomposedField<T>, target: RankCount) -> Result<DecomposedField<T>> {
    field.truncate(&truncation_plan(field, target)?)
}

/// Keeps the first `target.vec` and `target.mat` components in storage
/// order, ignoring groups and importance.
pub fn naive_truncate<T: Real>(field: &DecomposedField<T>, target: RankCount) -> Result<DecomposedField<T>> {
    if target.total() == 0 {
        return Err(Error::InvalidArgument("truncation target keeps no components".into()));
    }
    field.truncate(&Keep::Prefix(target))
}

/// The model with its color field truncated; density is untouched.
pub fn truncate_color<T: Real>(model: &FieldPair<T>, target: RankCount) -> Result<FieldPair<T>> {
    let mut out = model.clone();
    out.color = sort_and_truncate(&model.color, target)?;
    Ok(out)
}

/// Color targets in stored rank order: one component more per entry,
/// walking each group's vector components and then its matrix components.
pub fn rank_targets(layout: &RankLayout) -> Vec<RankCount> {
    let mut out = Vec::with_capacity(layout.rank());
    let mut acc = RankCount::default();
    for g in layout.groups() {
        for _ in 0..g.vec {
            acc.vec += 1;
            out.push(acc);
        }
        for _ in 0..g.mat {
            acc.mat += 1;
            out.push(acc);
        }
    }
    out
}

/// Group table that [`sort_and_truncate`] produces for `target`.
pub fn truncated_layout(layout: &RankLayout, target: RankCount) -> Result<RankLayout> {
    if target.total() == 0 || !target.fits_in(layout.total()) {
        return Err(Error::InvalidArgument(format!(
            "target {target} is empty or exceeds the layout total {}",
            layout.total()
        )));
    }
    let full = (0..=layout.num_groups())
        .rev()
        .find(|&m| layout.prefix(m).fits_in(target))
        .unwrap_or(0);
    let mut groups = layout.groups()[..full].to_vec();
    if let Some(p) = layout.groups().get(full) {
        let base = layout.prefix(full);
        let part = RankCount::new((target.vec - base.vec).min(p.vec), (target.mat - base.mat).min(p.mat));
        if part.total() > 0 {
            groups.push(part);
        }
    }
    RankLayout::new(groups)
}

/// Serialized size the model would have after [`truncate_color`] to `target`.
pub fn size_at<T: Real>(model: &FieldPair<T>, target: RankCount) -> Result<u64> {
    Ok(serialized_size_with(model, &truncated_layout(model.color.layout(), target)?))
}

/// Largest color truncation whose file fits in `budget` bytes.
pub fn compress_to_budget<T: Real>(model: &FieldPair<T>, budget: u64) -> Result<(FieldPair<T>, RankCount)> {
    let targets = rank_targets(model.color.layout());
    let full = serialized_size_with(model, model.color.layout());
    if budget >= full {
        return Ok((model.clone(), model.color.layout().total()));
    }
    let minimum = size_at(model, targets[0])?;
    if budget < minimum {
        return Err(Error::BudgetTooSmall { budget, minimum });
    }
    // sizes grow with every added component, so bisect
    let (mut lo, mut hi) = (0usize, targets.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if size_at(model, targets[mid])? <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let target = targets[lo];
    Ok((truncate_color(model, target)?, target))
}
