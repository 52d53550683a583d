//! Interpretation tools: PCA projections, class separation, nearest
//! neighbors, and per-example dumps of the attachment's internals.
//!
//! Everything here reads sentence vectors produced by a trained bundle in
//! inference mode, either as the encoders emit them ("unaltered") or after
//! the attachment has fixed them ("altered", MCFA only).

mod neighbors;
mod pca;
mod separation;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use neighbors::{cosine, nearest_neighbors, Neighbor, Neighbors};
pub use pca::{pca_project, ProjectionResult, POWER_MAX_ITERS, POWER_TOL};
pub use separation::{class_separation, mahalanobis_between, SeparationRow, RIDGE_SCALE};

use crate::data::{Dataset, MultiViewExample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mcfa::{FixReport, GateMode};
use crate::model::{forward_tape, inference_tokens, Mode, ModelBundle, ViewMapping};
use crate::numerics::{Tape, Tensor};

pub const UNALTERED: &str = "unaltered";
pub const ALTERED: &str = "altered";

/// Sentence vectors of a set of examples, stacked per view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewVectors {
    pub view_names: Vec<String>,
    /// Dataset indices, in row order.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// One `[n x d]` matrix per view.
    pub unaltered: Vec<Tensor>,
    /// Present for MCFA bundles.
    pub altered: Option<Vec<Tensor>>,
}

impl ViewVectors {
    /// `(space name, per-view matrices)` for every space available.
    pub fn spaces(&self) -> Vec<(&'static str, &[Tensor])> {
        let mut s = vec![(UNALTERED, self.unaltered.as_slice())];
        if let Some(a) = &self.altered {
            s.push((ALTERED, a.as_slice()));
        }
        s
    }
}

struct ExamplePass {
    views: Vec<Tensor>,
    report: Option<FixReport>,
}

fn run_example(bundle: &ModelBundle, mapping: &ViewMapping, ex: &MultiViewExample) -> Result<ExamplePass> {
    let tokens = inference_tokens(bundle, &mapping.tokens(ex));
    let mut tape = Tape::new(&bundle.store);
    let fv = forward_tape(&mut tape, bundle, &tokens, None, GateMode::Learned)?;
    Ok(ExamplePass {
        views: fv.views.iter().map(|&v| tape.value(v).clone()).collect(),
        report: fv.fix.as_ref().map(|f| f.report(&tape, &fv.views)),
    })
}

fn check_indices(dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Invalid("analysis over an empty example list".into()));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Invalid(format!("example index {i} out of range for {} examples", dataset.len())));
    }
    Ok(())
}

fn stack(rows: impl Iterator<Item = Vec<f64>>) -> Tensor {
    Tensor::from_rows(&rows.collect::<Vec<_>>()).expect("equal widths")
}

pub fn collect_vectors(bundle: &ModelBundle, dataset: &Dataset, indices: &[usize], exec: Exec) -> Result<ViewVectors> {
    check_indices(dataset, indices)?;
    let mapping = ViewMapping::new(bundle, dataset)?;
    let passes = exec.try_map_range(indices.len(), |k| run_example(bundle, &mapping, &dataset.examples[indices[k]]))?;
    let n_views = bundle.n_views();
    let unaltered = (0..n_views)
        .map(|v| stack(passes.iter().map(|p| p.views[v].data().to_vec())))
        .collect();
    let altered = (bundle.mode == Mode::Mcfa).then(|| {
        (0..n_views)
            .map(|v| stack(passes.iter().map(|p| p.report.as_ref().expect("mcfa report").altered[v].data().to_vec())))
            .collect()
    });
    Ok(ViewVectors {
        view_names: bundle.view_names.clone(),
        labels: indices.iter().map(|&i| dataset.examples[i].label).collect(),
        indices: indices.to_vec(),
        unaltered,
        altered,
    })
}

/// Attachment internals for each listed example.
pub fn fix_reports(bundle: &ModelBundle, dataset: &Dataset, indices: &[usize], exec: Exec) -> Result<Vec<FixReport>> {
    if bundle.mode != Mode::Mcfa {
        return Err(Error::Invalid(format!(
            "diagnostics need an MCFA model, this one is {}",
            bundle.mode
        )));
    }
    check_indices(dataset, indices)?;
    let mapping = ViewMapping::new(bundle, dataset)?;
    exec.try_map_range(indices.len(), |k| {
        let pass = run_example(bundle, &mapping, &dataset.examples[indices[k]])?;
        Ok(pass.report.expect("mcfa report"))
    })
}

/// `index,label,view,pc1,...,pck`, one PCA per view.
pub fn projection_csv(vectors: &ViewVectors, space: &[Tensor], k: usize) -> Result<String> {
    let mut out = String::from("index,label,view");
    for c in 1..=k {
        let _ = write!(out, ",pc{c}");
    }
    out.push('\n');
    for (name, m) in vectors.view_names.iter().zip(space) {
        let p = pca_project(m, k)?;
        for (row, (&idx, &label)) in vectors.indices.iter().zip(&vectors.labels).enumerate() {
            let _ = write!(out, "{idx},{label},{name}");
            for c in 0..k {
                let _ = write!(out, ",{}", p.projected.at(row, c));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Every class pair in every view and space.
pub fn separation_report(vectors: &ViewVectors) -> Result<Vec<SeparationRow>> {
    let mut rows = Vec::new();
    for (space, mats) in vectors.spaces() {
        for (name, m) in vectors.view_names.iter().zip(mats) {
            rows.extend(class_separation(m, &vectors.labels, name, space)?);
        }
    }
    Ok(rows)
}

/// `view,class_a,class_b,mahalanobis,space`
pub fn separation_csv(rows: &[SeparationRow]) -> String {
    let mut out = String::from("view,class_a,class_b,mahalanobis,space\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.view, r.class_a, r.class_b, r.mahalanobis, r.space);
    }
    out
}

/// Mean separation over class pairs for one view and space.
pub fn mean_separation(rows: &[SeparationRow], view: &str, space: &str) -> Option<f64> {
    let d: Vec<f64> = rows
        .iter()
        .filter(|r| r.view == view && r.space == space)
        .map(|r| r.mahalanobis)
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// `query,view,space,rank,index,label,similarity` for each query row
/// position in every view and space. Warnings are returned, not written.
pub fn neighbors_csv(vectors: &ViewVectors, queries: &[usize], k: usize) -> Result<(String, Vec<String>)> {
    let mut out = String::from("query,view,space,rank,index,label,similarity\n");
    let mut warnings = Vec::new();
    for (space, mats) in vectors.spaces() {
        for (name, m) in vectors.view_names.iter().zip(mats) {
            for &q in queries {
                let nn = nearest_neighbors(q, m, k)?;
                warnings.extend(nn.warnings.into_iter().map(|w| format!("{name}/{space}: {w}")));
                for (rank, n) in nn.ranked.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{name},{space},{},{},{},{}",
                        vectors.indices[q],
                        rank + 1,
                        vectors.indices[n.index],
                        vectors.labels[n.index],
                        n.similarity
                    );
                }
            }
        }
    }
    Ok((out, warnings))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub example: usize,
    pub label: usize,
    pub view: usize,
    pub self_usability: f64,
    /// Relative usability of every view for fixing this one; sums to one.
    pub attention: Vec<f64>,
    pub mean_gate: f64,
    /// Key of this view's vectors in the companion vector file.
    pub vector_ref: String,
}

/// Rows ordered by example index, then view.
pub fn diagnostic_rows(
    bundle: &ModelBundle,
    dataset: &Dataset,
    indices: &[usize],
    exec: Exec,
) -> Result<(Vec<DiagnosticRow>, Vec<FixReport>)> {
    let mut order = indices.to_vec();
    order.sort_unstable();
    let reports = fix_reports(bundle, dataset, &order, exec)?;
    let mut rows = Vec::with_capacity(order.len() * bundle.n_views());
    for (&i, r) in order.iter().zip(&reports) {
        for v in 0..bundle.n_views() {
            let g = r.gates[v].data();
            rows.push(DiagnosticRow {
                example: i,
                label: dataset.examples[i].label,
                view: v,
                self_usability: r.self_usability[v],
                attention: r.attention.row(v).to_vec(),
                mean_gate: g.iter().sum::<f64>() / g.len() as f64,
                vector_ref: format!("e{i}v{v}"),
            });
        }
    }
    Ok((rows, reports))
}

/// Path of the vector file written next to a diagnostics CSV.
pub fn vectors_path(diagnostics: &Path) -> PathBuf {
    let stem = diagnostics.file_stem().map_or_else(|| "diagnostics".into(), |s| s.to_string_lossy().into_owned());
    diagnostics.with_file_name(format!("{stem}_vectors.csv"))
}

/// Writes the diagnostics CSV to `out_path` and the unaltered and altered
/// vectors to [`vectors_path`]. Fails for B1/B2 bundles.
pub fn dump_diagnostics(
    bundle: &ModelBundle,
    dataset: &Dataset,
    indices: &[usize],
    out_path: &Path,
    exec: Exec,
) -> Result<Vec<DiagnosticRow>> {
    let (rows, reports) = diagnostic_rows(bundle, dataset, indices, exec)?;
    let names = &bundle.view_names;
    let mut out = String::from("example,label,view,view_name,self_usability");
    for n in names {
        let _ = write!(out, ",attn_{n}");
    }
    out.push_str(",mean_gate,vector_ref\n");
    for r in &rows {
        let _ = write!(out, "{},{},{},{},{}", r.example, r.label, r.view, names[r.view], r.self_usability);
        for a in &r.attention {
            let _ = write!(out, ",{a}");
        }
        let _ = writeln!(out, ",{},{}", r.mean_gate, r.vector_ref);
    }
    std::fs::write(out_path, out).map_err(|e| Error::io(out_path, e))?;

    let d = bundle.encoder.output_width();
    let mut vec_out = String::from("vector_ref,space");
    for j in 0..d {
        let _ = write!(vec_out, ",x{j}");
    }
    vec_out.push('\n');
    let n_views = bundle.n_views();
    for (chunk, report) in rows.chunks(n_views).zip(&reports) {
        for (r, (u, a)) in chunk.iter().zip(report.unaltered.iter().zip(&report.altered)) {
            for (space, t) in [(UNALTERED, u), (ALTERED, a)] {
                let _ = write!(vec_out, "{},{space}", r.vector_ref);
                for x in t.data() {
                    let _ = write!(vec_out, ",{x}");
                }
                vec_out.push('\n');
            }
        }
    }
    let vp = vectors_path(out_path);
    std::fs::write(&vp, vec_out).map_err(|e| Error::io(&vp, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};
    use crate::encoder::EncoderConfig;
    use crate::mcfa::self_usability;
    use crate::model::TrainConfig;

    fn setup(mode: Mode) -> (Dataset, ModelBundle) {
        let raw = gen_synthetic(&SyntheticConfig::new(2, 30, vec![vec![0], vec![1]], vec![0.0, 0.2], 3)).unwrap();
        let ds = raw.into_dataset(&(0..raw.len()).collect::<Vec<_>>());
        let enc = EncoderConfig {
            d_word: 4,
            n_maps: 2,
            windows: vec![3, 4, 5],
        };
        let b = ModelBundle::init(mode, &ds, enc, TrainConfig { seed: 2, ..Default::default() }, None).unwrap();
        (ds, b)
    }

    #[test]
    fn one_example_two_views_gives_two_rows() {
        let (ds, b) = setup(Mode::Mcfa);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.csv");
        let rows = dump_diagnostics(&b, &ds, &[7], &path, Exec::Sequential).unwrap();
        assert_eq!(rows.len(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("example,label,view,view_name,self_usability,attn_src,attn_t1,mean_gate,vector_ref"));
        let vtext = std::fs::read_to_string(vectors_path(&path)).unwrap();
        assert_eq!(vtext.lines().count(), 1 + 4);
    }

    #[test]
    fn dumped_rows_are_consistent_and_ordered() {
        let (ds, b) = setup(Mode::Mcfa);
        let (rows, reports) = diagnostic_rows(&b, &ds, &[9, 2, 5], Exec::Parallel).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.example, r.view)).collect();
        assert_eq!(keys, vec![(2, 0), (2, 1), (5, 0), (5, 1), (9, 0), (9, 1)]);
        for r in &rows {
            assert!((r.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // recompute self usability from the dumped vectors
        let mcfa = b.mcfa.as_ref().unwrap();
        for (chunk, rep) in rows.chunks(2).zip(&reports) {
            for r in chunk {
                let mut tape = Tape::new(&b.store);
                let v = tape.constant(rep.unaltered[r.view].clone());
                let s = self_usability(&mut tape, v, mcfa.views[r.view].self_scorer).unwrap();
                assert_eq!(tape.value(s).item(), r.self_usability);
            }
        }
    }

    #[test]
    fn diagnostics_reject_baselines() {
        let (ds, b) = setup(Mode::B1);
        let dir = tempfile::tempdir().unwrap();
        assert!(dump_diagnostics(&b, &ds, &[0], &dir.path().join("d.csv"), Exec::Sequential).is_err());
    }

    #[test]
    fn spaces_follow_the_mode() {
        let (ds, b1) = setup(Mode::B1);
        let (_, m) = setup(Mode::Mcfa);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let v1 = collect_vectors(&b1, &ds, &idx, Exec::Parallel).unwrap();
        let vm = collect_vectors(&m, &ds, &idx, Exec::Parallel).unwrap();
        assert_eq!(v1.spaces().len(), 1);
        assert_eq!(vm.spaces().len(), 2);
        // identical encoders across modes give identical unaltered vectors
        assert_eq!(v1.unaltered, vm.unaltered);
        let rows = separation_report(&vm).unwrap();
        assert_eq!(rows.len(), 2 * 2);
        let csv = separation_csv(&rows);
        assert!(csv.contains(",unaltered\n") && csv.contains(",altered\n"));
        let proj = projection_csv(&vm, &vm.unaltered, 2).unwrap();
        assert!(proj.starts_with("index,label,view,pc1,pc2\n"));
        assert_eq!(proj.lines().count(), 1 + 2 * ds.len());
        let (nn, _) = neighbors_csv(&vm, &[0, 1], 3).unwrap();
        assert_eq!(nn.lines().count(), 1 + 2 * 2 * 2 * 3);
    }
}
