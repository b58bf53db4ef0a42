//! Robust-accuracy aggregation and report emission.
//!
//! Attacks produce per-example booleans ("still classified correctly"). This
//! module folds those into the headline numbers — per-(attack, source) robust
//! accuracy, the best adversary per attack (intersection over sources), and
//! the best known robust accuracy (intersection over everything) — and writes
//! them out as a deterministic CSV table plus JSON artifacts. It also dumps
//! per-image fitting characterisation data (loss curves, final-error
//! histograms, cross-key gaps) for offline analysis.
//!
//! Masks are persisted per example, so a late-added attack column can refine
//! the best-known figure without re-running earlier attacks.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attacks::TransferCell;
use crate::error::{Error, Result};

/// Per-example robustness column for one source model under one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub source: String,
    /// `robust[k]`: the target still classifies example `k` correctly after
    /// the perturbation computed on this source.
    pub robust: Vec<bool>,
}

/// All source columns for one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackColumn {
    pub attack: String,
    pub sources: Vec<SourceColumn>,
}

/// Per-example correctness bookkeeping for one evaluation set: clean
/// predictions plus one robustness column per (attack, source) pair.
///
/// Robust-correctness is only meaningful where the clean evaluation ran on
/// the same examples, so every column must have exactly the same length as
/// `clean`, and every attack must carry the same source list (they share the
/// report's columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessMask {
    /// `clean[k]`: the target classifies example `k` correctly unperturbed.
    pub clean: Vec<bool>,
    pub attacks: Vec<AttackColumn>,
}

impl CorrectnessMask {
    /// A mask with no attack columns yet; columns are added with
    /// [`CorrectnessMask::push_column`].
    pub fn new(clean: Vec<bool>) -> Self {
        CorrectnessMask {
            clean,
            attacks: Vec::new(),
        }
    }

    /// Add one (attack, source) robustness column, creating the attack row
    /// on first sight. Column length must match `clean`.
    pub fn push_column(
        &mut self,
        attack: impl Into<String>,
        source: impl Into<String>,
        robust: Vec<bool>,
    ) -> Result<()> {
        if robust.len() != self.clean.len() {
            return Err(Error::InvalidArgument(format!(
                "robust column has {} entries but clean mask has {}",
                robust.len(),
                self.clean.len()
            )));
        }
        let attack = attack.into();
        let source = source.into();
        let column = SourceColumn { source, robust };
        match self.attacks.iter_mut().find(|a| a.attack == attack) {
            Some(existing) => existing.sources.push(column),
            None => self.attacks.push(AttackColumn {
                attack,
                sources: vec![column],
            }),
        }
        Ok(())
    }

    /// Assemble a mask from transfer-matrix cells. Attack and source order
    /// follow first appearance in `cells`.
    pub fn from_cells(clean: Vec<bool>, cells: &[TransferCell]) -> Result<Self> {
        let mut mask = CorrectnessMask::new(clean);
        for cell in cells {
            mask.push_column(cell.attack.clone(), cell.source.clone(), cell.robust.clone())?;
        }
        mask.validate()?;
        Ok(mask)
    }

    /// Check the structural invariants: non-empty example set, consistent
    /// column lengths, unique attack names, and an identical source list on
    /// every attack.
    pub fn validate(&self) -> Result<()> {
        if self.clean.is_empty() {
            return Err(Error::InvalidArgument("empty example set".into()));
        }
        let reference: Vec<&str> = match self.attacks.first() {
            Some(first) => first.sources.iter().map(|s| s.source.as_str()).collect(),
            None => Vec::new(),
        };
        for (i, attack) in self.attacks.iter().enumerate() {
            if self.attacks[..i].iter().any(|a| a.attack == attack.attack) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate attack name {:?}",
                    attack.attack
                )));
            }
            if attack.sources.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "attack {:?} has no source columns",
                    attack.attack
                )));
            }
            let names: Vec<&str> = attack.sources.iter().map(|s| s.source.as_str()).collect();
            if names != reference {
                return Err(Error::InvalidArgument(format!(
                    "attack {:?} has sources {:?} but {:?} has {:?}",
                    attack.attack, names, self.attacks[0].attack, reference
                )));
            }
            for source in &attack.sources {
                if source.robust.len() != self.clean.len() {
                    return Err(Error::InvalidArgument(format!(
                        "column ({:?}, {:?}) has {} entries but clean mask has {}",
                        attack.attack,
                        source.source,
                        source.robust.len(),
                        self.clean.len()
                    )));
                }
            }
            let mut seen = std::collections::HashSet::new();
            for name in &names {
                if !seen.insert(*name) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate source name {name:?} in attack {:?}",
                        attack.attack
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn examples(&self) -> usize {
        self.clean.len()
    }

    /// Source names shared by all attack columns (empty if no attacks).
    pub fn source_names(&self) -> Vec<String> {
        self.attacks
            .first()
            .map(|a| a.sources.iter().map(|s| s.source.clone()).collect())
            .unwrap_or_default()
    }

    /// Fraction of examples classified correctly without perturbation.
    pub fn clean_accuracy(&self) -> f64 {
        fraction(self.clean.iter().copied())
    }

    /// Robust accuracy of one (attack, source) cell: the example counts as
    /// robust only if it is also clean-correct.
    pub fn cell_accuracy(&self, attack: usize, source: usize) -> f64 {
        let col = &self.attacks[attack].sources[source];
        fraction(
            self.clean
                .iter()
                .zip(&col.robust)
                .map(|(&c, &r)| c && r),
        )
    }

    /// Robust accuracy against the strongest combination of sources for one
    /// attack: an example survives only if it is clean-correct and robust
    /// against the perturbation from *every* source.
    pub fn best_adversary(&self, attack: usize) -> Result<f64> {
        let column = self.attacks.get(attack).ok_or_else(|| {
            Error::InvalidArgument(format!("attack index {attack} out of range"))
        })?;
        if column.sources.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "attack {:?} has no source columns",
                column.attack
            )));
        }
        if self.clean.is_empty() {
            return Err(Error::InvalidArgument("empty example set".into()));
        }
        Ok(fraction((0..self.clean.len()).map(|k| {
            self.clean[k] && column.sources.iter().all(|s| s.robust[k])
        })))
    }

    /// Best known robust accuracy: the fraction of examples that are
    /// clean-correct and survive every (attack, source) column.
    pub fn best_known(&self) -> Result<f64> {
        if self.clean.is_empty() {
            return Err(Error::InvalidArgument("empty example set".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::InvalidArgument(
                "best-known accuracy needs at least one attack column".into(),
            ));
        }
        Ok(fraction((0..self.clean.len()).map(|k| {
            self.clean[k]
                && self
                    .attacks
                    .iter()
                    .all(|a| a.sources.iter().all(|s| s.robust[k]))
        })))
    }

    /// Best known restricted to a single source column: intersection over
    /// attacks of that source's robustness (the per-source cell of the
    /// report's final row).
    pub fn best_known_for_source(&self, source: usize) -> Result<f64> {
        if self.attacks.is_empty() {
            return Err(Error::InvalidArgument(
                "best-known accuracy needs at least one attack column".into(),
            ));
        }
        for attack in &self.attacks {
            if source >= attack.sources.len() {
                return Err(Error::InvalidArgument(format!(
                    "source index {source} out of range"
                )));
            }
        }
        Ok(fraction((0..self.clean.len()).map(|k| {
            self.clean[k] && self.attacks.iter().all(|a| a.sources[source].robust[k])
        })))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mask: CorrectnessMask = serde_json::from_str(&text)?;
        mask.validate()?;
        Ok(mask)
    }
}

fn fraction(bits: impl Iterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for b in bits {
        total += 1;
        hits += b as usize;
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Mean over examples of AND(clean-correct, every robust column).
pub fn best_known(masks: &CorrectnessMask) -> Result<f64> {
    masks.best_known()
}

/// Mean over examples of AND(clean-correct, robust against every source) for
/// the named attack.
pub fn best_adversary(masks: &CorrectnessMask, attack: &str) -> Result<f64> {
    let idx = masks
        .attacks
        .iter()
        .position(|a| a.attack == attack)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown attack {attack:?}")))?;
    masks.best_adversary(idx)
}

/// Context recorded alongside a report: threat-model parameters and the
/// identities of the artifacts that produced the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Perturbation norm label, e.g. "linf" or "l2".
    pub norm: String,
    pub epsilon: f64,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
}

/// One attack row of the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack: String,
    /// Robust accuracy per source, report column order.
    pub per_source: Vec<f64>,
    pub best_adversary: f64,
}

/// Aggregated robust-accuracy table plus context. All fractions in [0, 1];
/// the CSV renders them as percentages with two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustReport {
    pub clean_accuracy: f64,
    pub examples: usize,
    pub sources: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Intersection over attacks per source column.
    pub best_known_per_source: Vec<f64>,
    /// Intersection over every attack and source.
    pub best_known: f64,
    pub metadata: ReportMetadata,
}

impl RobustReport {
    /// Invariants every well-formed report satisfies; violated only by
    /// hand-edited data.
    pub fn check_invariants(&self) -> Result<()> {
        let columns = self.sources.len();
        for row in &self.rows {
            if row.per_source.len() != columns {
                return Err(Error::Format(format!(
                    "row {:?} has {} cells, expected {columns}",
                    row.attack,
                    row.per_source.len()
                )));
            }
            for (&cell, bk) in row.per_source.iter().zip(&self.best_known_per_source) {
                if self.best_known > cell + 1e-12 || *bk > cell + 1e-12 {
                    return Err(Error::Format(format!(
                        "best-known exceeds cell accuracy in row {:?}",
                        row.attack
                    )));
                }
            }
            if self.best_known > row.best_adversary + 1e-12 {
                return Err(Error::Format(format!(
                    "best-known exceeds best-adversary in row {:?}",
                    row.attack
                )));
            }
        }
        if self.best_known > self.clean_accuracy + 1e-12 {
            return Err(Error::Format(
                "best-known exceeds clean accuracy".into(),
            ));
        }
        Ok(())
    }
}

fn pct(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

/// Build the aggregated report and its CSV rendering from per-example masks.
///
/// CSV layout: header `attack,<source..>,best_adversary`; one row per attack
/// with per-source robust accuracy; final row `best_known` with per-source
/// intersections over attacks and, in the last cell, the overall best-known
/// figure. All values are percentages with two decimals. The CSV is
/// deterministic — timestamps only ever appear in the JSON sidecar written
/// by [`write_report`].
pub fn emit_report(
    masks: &CorrectnessMask,
    metadata: &ReportMetadata,
) -> Result<(RobustReport, String)> {
    masks.validate()?;
    if masks.attacks.is_empty() {
        return Err(Error::InvalidArgument(
            "report needs at least one attack column".into(),
        ));
    }
    let sources = masks.source_names();
    let mut rows = Vec::with_capacity(masks.attacks.len());
    for (i, attack) in masks.attacks.iter().enumerate() {
        let per_source: Vec<f64> = (0..sources.len())
            .map(|j| masks.cell_accuracy(i, j))
            .collect();
        rows.push(ReportRow {
            attack: attack.attack.clone(),
            per_source,
            best_adversary: masks.best_adversary(i)?,
        });
    }
    let best_known_per_source: Result<Vec<f64>> = (0..sources.len())
        .map(|j| masks.best_known_for_source(j))
        .collect();
    let report = RobustReport {
        clean_accuracy: masks.clean_accuracy(),
        examples: masks.examples(),
        sources,
        rows,
        best_known_per_source: best_known_per_source?,
        best_known: masks.best_known()?,
        metadata: metadata.clone(),
    };
    report.check_invariants()?;
    Ok((report.clone(), render_report_csv(&report)))
}

/// Render the report table; see [`emit_report`] for the layout.
pub fn render_report_csv(report: &RobustReport) -> String {
    let mut out = String::new();
    out.push_str("attack");
    for source in &report.sources {
        out.push(',');
        out.push_str(source);
    }
    out.push_str(",best_adversary\n");
    for row in &report.rows {
        out.push_str(&row.attack);
        for &cell in &row.per_source {
            out.push(',');
            out.push_str(&pct(cell));
        }
        out.push(',');
        out.push_str(&pct(row.best_adversary));
        out.push('\n');
    }
    out.push_str("best_known");
    for &cell in &report.best_known_per_source {
        out.push(',');
        out.push_str(&pct(cell));
    }
    out.push(',');
    out.push_str(&pct(report.best_known));
    out.push('\n');
    out
}

/// Table parsed back from [`render_report_csv`] output. Values are fractions
/// (percent cells divided by 100).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub sources: Vec<String>,
    /// (attack, per-source accuracy, best adversary).
    pub rows: Vec<(String, Vec<f64>, f64)>,
    pub best_known_per_source: Vec<f64>,
    pub best_known: f64,
}

/// Parse a report CSV produced by [`render_report_csv`].
pub fn parse_report_csv(text: &str) -> Result<ParsedReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty report CSV".into()))?;
    let cells: Vec<&str> = header.split(',').collect();
    if cells.first() != Some(&"attack") || cells.last() != Some(&"best_adversary") {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    if cells.len() < 3 {
        return Err(Error::Format("report header has no source columns".into()));
    }
    let sources: Vec<String> = cells[1..cells.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let parse_cells = |line: &str| -> Result<(String, Vec<f64>)> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != sources.len() + 2 {
            return Err(Error::Format(format!(
                "row {:?} has {} cells, expected {}",
                line,
                parts.len(),
                sources.len() + 2
            )));
        }
        let values: Result<Vec<f64>> = parts[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map(|v| v / 100.0)
                    .map_err(|e| Error::Format(format!("bad percentage {s:?}: {e}")))
            })
            .collect();
        Ok((parts[0].to_string(), values?))
    };
    let mut rows = Vec::new();
    let mut final_row = None;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (label, values) = parse_cells(line)?;
        if label == "best_known" {
            final_row = Some(values);
        } else {
            let (last, per_source) = values.split_last().expect("length checked");
            rows.push((label, per_source.to_vec(), *last));
        }
    }
    let final_row =
        final_row.ok_or_else(|| Error::Format("report CSV missing best_known row".into()))?;
    if rows.is_empty() {
        return Err(Error::Format("report CSV has no attack rows".into()));
    }
    let (best_known, best_known_per_source) = final_row.split_last().expect("length checked");
    Ok(ParsedReport {
        sources,
        rows,
        best_known_per_source: best_known_per_source.to_vec(),
        best_known: *best_known,
    })
}

/// Emit the full report bundle under `dir`:
///
/// * `report.csv` — the table ([`render_report_csv`]); byte-stable across
///   reruns with the same masks.
/// * `report.json` — the [`RobustReport`] plus a `generated_unix` timestamp
///   (the only artifact that ever carries a timestamp).
/// * `masks.json` — the per-example masks, so future attack columns can
///   refine best-known without re-running anything.
pub fn write_report(
    dir: impl AsRef<Path>,
    masks: &CorrectnessMask,
    metadata: &ReportMetadata,
) -> Result<RobustReport> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (report, csv) = emit_report(masks, metadata)?;
    fs::write(dir.join("report.csv"), &csv)?;
    masks.save(dir.join("masks.json"))?;
    let generated_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = serde_json::json!({
        "report": report,
        "generated_unix": generated_unix,
    });
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(report)
}

/// One bin of the final-error histogram: `low ≤ value < high` (the top bin
/// is closed on the right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]` of the inputs. Every value lands
/// in exactly one bin, so counts always sum to the input count.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("histogram of empty data".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = if width == 0.0 {
            0
        } else {
            (((v - min) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: min + width * i as f64,
            high: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count,
        })
        .collect())
}

/// Statistics over cross-key activation gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyGapStats {
    pub pairs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Summary returned (and written as `summary.json`) by
/// [`characterisation_dump`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterisationSummary {
    pub images: usize,
    /// Optimizer steps per image (every loss curve has this many rows).
    pub steps_per_image: usize,
    /// Mean of the per-image final errors, in input order.
    pub mean_final_error: f64,
    pub min_final_error: f64,
    pub max_final_error: f64,
    pub histogram: Vec<HistogramBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_gaps: Option<KeyGapStats>,
}

/// Dump per-image fitting characterisation data under `dir`:
///
/// * `curves.csv` (`image,step,loss`) — one row per optimizer step per image;
/// * `final_errors.csv` (`image,final_error`) — one row per image;
/// * `histogram.csv` (`bin_low,bin_high,count`) — equal-width bins over the
///   final errors, counts summing to the image count;
/// * `key_gaps.csv` (`pair,max_abs_gap`) — only when `key_gaps` is non-empty;
/// * `summary.json` — the returned [`CharacterisationSummary`].
///
/// `loss_curves[i]` is image `i`'s per-step fitting loss (all images must
/// have the same step count) and `final_errors[i]` its final per-pixel error.
pub fn characterisation_dump(
    loss_curves: &[Vec<f64>],
    final_errors: &[f64],
    key_gaps: &[f64],
    bins: usize,
    dir: impl AsRef<Path>,
) -> Result<CharacterisationSummary> {
    if loss_curves.is_empty() {
        return Err(Error::InvalidArgument("no loss curves to dump".into()));
    }
    if loss_curves.len() != final_errors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} loss curves but {} final errors",
            loss_curves.len(),
            final_errors.len()
        )));
    }
    let steps = loss_curves[0].len();
    if steps == 0 {
        return Err(Error::InvalidArgument("empty loss curve".into()));
    }
    for (i, curve) in loss_curves.iter().enumerate() {
        if curve.len() != steps {
            return Err(Error::InvalidArgument(format!(
                "loss curve {i} has {} steps, expected {steps}",
                curve.len()
            )));
        }
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut curves = String::from("image,step,loss\n");
    for (i, curve) in loss_curves.iter().enumerate() {
        for (s, loss) in curve.iter().enumerate() {
            curves.push_str(&format!("{i},{s},{loss:.17e}\n"));
        }
    }
    fs::write(dir.join("curves.csv"), curves)?;

    let mut errors_csv = String::from("image,final_error\n");
    for (i, err) in final_errors.iter().enumerate() {
        errors_csv.push_str(&format!("{i},{err:.17e}\n"));
    }
    fs::write(dir.join("final_errors.csv"), errors_csv)?;

    let hist = histogram(final_errors, bins)?;
    let mut hist_csv = String::from("bin_low,bin_high,count\n");
    for bin in &hist {
        hist_csv.push_str(&format!("{:.17e},{:.17e},{}\n", bin.low, bin.high, bin.count));
    }
    fs::write(dir.join("histogram.csv"), hist_csv)?;

    let gap_stats = if key_gaps.is_empty() {
        None
    } else {
        let mut gaps_csv = String::from("pair,max_abs_gap\n");
        for (i, gap) in key_gaps.iter().enumerate() {
            gaps_csv.push_str(&format!("{i},{gap:.17e}\n"));
        }
        fs::write(dir.join("key_gaps.csv"), gaps_csv)?;
        Some(KeyGapStats {
            pairs: key_gaps.len(),
            mean: key_gaps.iter().sum::<f64>() / key_gaps.len() as f64,
            min: key_gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            max: key_gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    };

    let summary = CharacterisationSummary {
        images: loss_curves.len(),
        steps_per_image: steps,
        mean_final_error: final_errors.iter().sum::<f64>() / final_errors.len() as f64,
        min_final_error: final_errors.iter().cloned().fold(f64::INFINITY, f64::min),
        max_final_error: final_errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        histogram: hist,
        key_gaps: gap_stats,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, PrivateKey, StreamLabel};

    fn mask_from(clean: &[bool], columns: &[(&str, &str, &[bool])]) -> CorrectnessMask {
        let mut mask = CorrectnessMask::new(clean.to_vec());
        for (attack, source, robust) in columns {
            mask.push_column(*attack, *source, robust.to_vec()).unwrap();
        }
        mask.validate().unwrap();
        mask
    }

    #[test]
    fn hand_computed_best_known_is_one_third() {
        let mask = mask_from(
            &[true, true, true],
            &[
                ("attack-a", "white-box", &[true, false, true]),
                ("attack-b", "white-box", &[true, true, false]),
            ],
        );
        assert_eq!(mask.best_known().unwrap(), 1.0 / 3.0);
        assert_eq!(best_known(&mask).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn all_true_masks_give_one_and_all_true_columns_change_nothing() {
        let mut mask = mask_from(
            &[true; 5],
            &[("attack-a", "white-box", &[true; 5])],
        );
        assert_eq!(mask.best_known().unwrap(), 1.0);

        let mask_third = mask_from(
            &[true, true, true],
            &[
                ("attack-a", "white-box", &[true, false, true]),
                ("attack-b", "white-box", &[true, true, false]),
            ],
        );
        let before = mask_third.best_known().unwrap();
        let mut extended = mask_third.clone();
        extended
            .push_column("attack-c", "white-box", vec![true, true, true])
            .unwrap();
        assert_eq!(extended.best_known().unwrap(), before);

        // An extra all-true source column on every attack changes nothing.
        mask.push_column("attack-a", "surrogate", vec![true; 5])
            .unwrap();
        mask.validate().unwrap();
        assert_eq!(mask.best_known().unwrap(), 1.0);

        // But a source list that differs between attacks is rejected.
        let mut uneven = extended.clone();
        uneven
            .push_column("attack-a", "surrogate", vec![true, true, true])
            .unwrap();
        uneven.validate().unwrap_err();
    }

    #[test]
    fn best_adversary_matches_single_source_and_decreases_with_more() {
        let clean = [true, true, true, true];
        let single = mask_from(&clean, &[("pgd", "s0", &[true, false, true, true])]);
        assert_eq!(single.best_adversary(0).unwrap(), single.cell_accuracy(0, 0));
        assert_eq!(single.best_adversary(0).unwrap(), 0.75);

        let double = mask_from(
            &clean,
            &[
                ("pgd", "s0", &[true, false, true, true]),
                ("pgd", "s1", &[true, true, false, true]),
            ],
        );
        assert!(double.best_adversary(0).unwrap() <= single.best_adversary(0).unwrap());
        assert_eq!(double.best_adversary(0).unwrap(), 0.5);

        let with_dead_source = mask_from(
            &clean,
            &[
                ("pgd", "s0", &[true, false, true, true]),
                ("pgd", "s1", &[false, false, false, false]),
            ],
        );
        assert_eq!(with_dead_source.best_adversary(0).unwrap(), 0.0);
    }

    #[test]
    fn best_known_bounded_by_cells_and_monotone_in_attacks() {
        let mut stream = derive_stream(PrivateKey(41), StreamLabel::Evaluation);
        for fixture in 0..100u64 {
            let sub = stream.split(fixture);
            let mut draw = sub.split(0);
            let n = 3 + (draw.next_u64() % 8) as usize;
            let attacks = 1 + (draw.next_u64() % 3) as usize;
            let sources = 1 + (draw.next_u64() % 3) as usize;
            let mut mask = CorrectnessMask::new(
                (0..n).map(|_| draw.next_u64() % 4 != 0).collect(),
            );
            for a in 0..attacks {
                for s in 0..sources {
                    mask.push_column(
                        format!("attack-{a}"),
                        format!("source-{s}"),
                        (0..n).map(|_| draw.next_u64() % 3 != 0).collect(),
                    )
                    .unwrap();
                }
            }
            mask.validate().unwrap();

            let bk = mask.best_known().unwrap();
            assert!(bk <= mask.clean_accuracy() + 1e-12);
            for a in 0..attacks {
                let ba = mask.best_adversary(a).unwrap();
                assert!(bk <= ba + 1e-12);
                for s in 0..sources {
                    assert!(bk <= mask.cell_accuracy(a, s) + 1e-12);
                    assert!(ba <= mask.cell_accuracy(a, s) + 1e-12);
                }
            }

            // Dropping the last attack can only raise (or keep) best-known.
            if attacks > 1 {
                let mut fewer = mask.clone();
                fewer.attacks.pop();
                assert!(fewer.best_known().unwrap() >= bk - 1e-12);
            }
        }
    }

    #[test]
    fn report_csv_layout_round_trip_and_determinism() {
        let mask = mask_from(
            &[true, true, true, false],
            &[
                ("pgd", "conv-bypass", &[true, false, true, true]),
                ("pgd", "identity", &[true, true, false, true]),
                ("square", "conv-bypass", &[true, true, true, true]),
                ("square", "identity", &[false, true, true, true]),
            ],
        );
        let metadata = ReportMetadata {
            norm: "linf".into(),
            epsilon: 8.0 / 255.0,
            model_id: "defended-desk".into(),
            transform_id: Some("keyed-inr".into()),
            dataset_id: None,
        };
        let (report, csv) = emit_report(&mask, &metadata).unwrap();
        report.check_invariants().unwrap();

        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "attack,conv-bypass,identity,best_adversary");
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[3].starts_with("best_known,"));
        // 3/4 examples clean-correct; pgd cells: clean ∧ robust.
        assert_eq!(lines[1], "pgd,50.00,50.00,25.00");
        assert_eq!(report.clean_accuracy, 0.75);

        // Two-decimal percentage formatting.
        for line in &lines[1..] {
            for cell in line.split(',').skip(1) {
                assert!(cell.contains('.') && cell.split('.').nth(1).unwrap().len() == 2);
            }
        }

        let parsed = parse_report_csv(&csv).unwrap();
        assert_eq!(parsed.sources, report.sources);
        assert_eq!(parsed.rows.len(), report.rows.len());
        for (row, (name, cells, ba)) in report.rows.iter().zip(&parsed.rows) {
            assert_eq!(&row.attack, name);
            for (a, b) in row.per_source.iter().zip(cells) {
                assert!((a - b).abs() < 5e-5);
            }
            assert!((row.best_adversary - ba).abs() < 5e-5);
        }
        assert!((parsed.best_known - report.best_known).abs() < 5e-5);

        // Re-emission is byte-identical.
        let (_, csv2) = emit_report(&mask, &metadata).unwrap();
        assert_eq!(csv, csv2);
    }

    #[test]
    fn write_report_persists_masks_and_csv_stable_across_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let mask = mask_from(
            &[true, false, true],
            &[("pgd", "white-box", &[true, true, false])],
        );
        let metadata = ReportMetadata {
            norm: "linf".into(),
            epsilon: 8.0 / 255.0,
            model_id: "m".into(),
            transform_id: None,
            dataset_id: None,
        };
        let report = write_report(dir.path(), &mask, &metadata).unwrap();
        let csv1 = std::fs::read(dir.path().join("report.csv")).unwrap();
        let reloaded = CorrectnessMask::load(dir.path().join("masks.json")).unwrap();
        assert_eq!(reloaded, mask);

        let report2 = write_report(dir.path(), &reloaded, &metadata).unwrap();
        let csv2 = std::fs::read(dir.path().join("report.csv")).unwrap();
        assert_eq!(report, report2);
        assert_eq!(csv1, csv2);

        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert!(sidecar.get("generated_unix").is_some());
        assert_eq!(
            sidecar["report"]["metadata"]["norm"],
            serde_json::Value::String("linf".into())
        );
    }

    #[test]
    fn from_cells_groups_by_attack_and_rejects_bad_lengths() {
        let cells = vec![
            TransferCell {
                source: "s0".into(),
                attack: "pgd".into(),
                robust: vec![true, false],
                source_success_rate: 0.5,
            },
            TransferCell {
                source: "s0".into(),
                attack: "square".into(),
                robust: vec![true, true],
                source_success_rate: 0.0,
            },
            TransferCell {
                source: "s1".into(),
                attack: "pgd".into(),
                robust: vec![false, false],
                source_success_rate: 1.0,
            },
            TransferCell {
                source: "s1".into(),
                attack: "square".into(),
                robust: vec![true, false],
                source_success_rate: 0.5,
            },
        ];
        let mask = CorrectnessMask::from_cells(vec![true, true], &cells).unwrap();
        assert_eq!(mask.attacks.len(), 2);
        assert_eq!(mask.attacks[0].attack, "pgd");
        assert_eq!(mask.source_names(), vec!["s0".to_string(), "s1".to_string()]);
        assert_eq!(mask.best_adversary(0).unwrap(), 0.0);
        assert_eq!(mask.best_adversary(1).unwrap(), 0.5);

        let bad = vec![TransferCell {
            source: "s0".into(),
            attack: "pgd".into(),
            robust: vec![true],
            source_success_rate: 0.0,
        }];
        assert!(CorrectnessMask::from_cells(vec![true, true], &bad).is_err());

        assert!(CorrectnessMask::new(vec![]).best_known().is_err());
        assert!(mask_from(&[true], &[]).validate().is_ok());
        assert!(CorrectnessMask::new(vec![true]).best_known().is_err());
    }

    #[test]
    fn characterisation_dump_bins_sum_and_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut stream = derive_stream(PrivateKey(7), StreamLabel::Evaluation);
        let images = 12;
        let steps = 15;
        let curves: Vec<Vec<f64>> = (0..images)
            .map(|_| (0..steps).map(|_| stream.next_uniform::<f64>()).collect())
            .collect();
        let finals: Vec<f64> = curves.iter().map(|c| *c.last().unwrap()).collect();
        let gaps = vec![0.5, 0.25, 0.125];

        let summary =
            characterisation_dump(&curves, &finals, &gaps, 8, dir.path()).unwrap();
        assert_eq!(summary.images, images);
        assert_eq!(summary.steps_per_image, steps);
        let bin_total: usize = summary.histogram.iter().map(|b| b.count).sum();
        assert_eq!(bin_total, images);

        let expected_mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert_eq!(summary.mean_final_error, expected_mean);

        let curves_text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves_text.lines().count(), 1 + images * steps);
        let gap_text = std::fs::read_to_string(dir.path().join("key_gaps.csv")).unwrap();
        assert_eq!(gap_text.lines().count(), 1 + gaps.len());
        let stats = summary.key_gaps.unwrap();
        assert_eq!(stats.pairs, 3);
        assert_eq!(stats.max, 0.5);

        // Constant errors: single occupied bin, everything still sums.
        let const_summary = characterisation_dump(
            &curves,
            &vec![0.25; images],
            &[],
            4,
            dir.path(),
        )
        .unwrap();
        let total: usize = const_summary.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, images);
        assert_eq!(const_summary.histogram[0].count, images);
        assert!(const_summary.key_gaps.is_none());

        // Mismatched lengths and ragged curves are rejected.
        assert!(characterisation_dump(&curves, &finals[..3], &[], 4, dir.path()).is_err());
        let mut ragged = curves.clone();
        ragged[3].pop();
        assert!(characterisation_dump(&ragged, &finals, &[], 4, dir.path()).is_err());
    }
}
