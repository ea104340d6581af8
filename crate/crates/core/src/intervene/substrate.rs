//! Grounded counterfactual substrates: plain tables whose measured effect
//! feeds the observation rewrite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToposError};
use crate::pipeline::sha256_hex;

/// Rows kept in a result's intermediate table.
pub const TABLE_ROW_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grounding {
    FullReproduction,
    #[default]
    FigureDataProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstrateKind {
    ScaleMap,
    IndexSubstitution,
    GroupMeanSubstitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log1p,
    Identity,
    FractionPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub absolute: f64,
    pub relative: f64,
}

impl Effect {
    fn between(baseline: f64, counterfactual: f64) -> Result<Self> {
        if baseline == 0.0 {
            return Err(ToposError::Substrate("baseline metric is zero".into()));
        }
        let absolute = counterfactual - baseline;
        Ok(Self {
            absolute,
            relative: absolute / baseline,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoShift {
    pub from: String,
    pub to: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstrateResult {
    pub kind: SubstrateKind,
    pub baseline: f64,
    pub counterfactual: f64,
    pub effect: Effect,
    /// Kind-specific scalars (factor, suppressed fraction, per-marker shifts).
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    #[serde(default)]
    pub table: Vec<TableRow>,
    #[serde(default)]
    pub co_shift: Vec<CoShift>,
    /// File name to sha256 of its bytes.
    #[serde(default)]
    pub input_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub grounding: Grounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

/// Scales a gridded map by `m_cf / m_base` and compares cos(latitude)
/// weighted means.
pub fn scale_map_counterfactual(
    grid: &[GridCell],
    m_base: f64,
    m_cf: f64,
) -> Result<SubstrateResult> {
    if m_base == 0.0 {
        return Err(ToposError::Substrate("m_base must be nonzero".into()));
    }
    if grid.is_empty() {
        return Err(ToposError::Substrate("grid is empty".into()));
    }
    let factor = m_cf / m_base;
    let weights: Vec<f64> = grid
        .iter()
        .map(|c| c.lat.to_radians().cos().max(0.0))
        .collect();
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(ToposError::Substrate("grid has no area weight".into()));
    }
    let baseline = grid
        .iter()
        .zip(&weights)
        .map(|(c, w)| w * c.value)
        .sum::<f64>()
        / wsum;
    let counterfactual = grid
        .iter()
        .zip(&weights)
        .map(|(c, w)| w * c.value * factor)
        .sum::<f64>()
        / wsum;
    let table = grid
        .iter()
        .zip(&weights)
        .take(TABLE_ROW_LIMIT)
        .map(|(c, w)| TableRow {
            label: format!("{},{}", c.lat, c.lon),
            values: BTreeMap::from([
                ("weight".into(), *w),
                ("baseline".into(), c.value),
                ("counterfactual".into(), c.value * factor),
            ]),
        })
        .collect();
    Ok(SubstrateResult {
        kind: SubstrateKind::ScaleMap,
        baseline,
        counterfactual,
        effect: Effect::between(baseline, counterfactual)?,
        details: BTreeMap::from([
            ("m_base".into(), m_base),
            ("m_cf".into(), m_cf),
            ("factor".into(), factor),
            ("suppressed_fraction".into(), 1.0 - factor),
            ("drop".into(), baseline - counterfactual),
            ("cells".into(), grid.len() as f64),
        ]),
        table,
        co_shift: Vec::new(),
        input_hashes: BTreeMap::new(),
        grounding: Grounding::default(),
    })
}

/// Baseline index `100 + mean anomaly` against the restored index 100.
pub fn index_substitution(stations: &[(String, f64)]) -> Result<SubstrateResult> {
    if stations.is_empty() {
        return Err(ToposError::Substrate("no station values".into()));
    }
    let mean = stations.iter().map(|(_, a)| a).sum::<f64>() / stations.len() as f64;
    let baseline = 100.0 + mean;
    let counterfactual = 100.0;
    Ok(SubstrateResult {
        kind: SubstrateKind::IndexSubstitution,
        baseline,
        counterfactual,
        effect: Effect::between(baseline, counterfactual)?,
        details: BTreeMap::from([
            ("mean_anomaly_pct".into(), mean),
            ("stations".into(), stations.len() as f64),
        ]),
        table: stations
            .iter()
            .take(TABLE_ROW_LIMIT)
            .map(|(s, a)| TableRow {
                label: s.clone(),
                values: BTreeMap::from([("anomaly_pct".into(), *a)]),
            })
            .collect(),
        co_shift: Vec::new(),
        input_hashes: BTreeMap::new(),
        grounding: Grounding::default(),
    })
}

/// A rows-by-markers table with a group label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub markers: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Panel {
    fn marker(&self, name: &str) -> Result<usize> {
        self.markers
            .iter()
            .position(|m| m.eq_ignore_ascii_case(name))
            .ok_or_else(|| ToposError::Substrate(format!("marker `{name}` not in panel")))
    }

    /// Per-marker means of the transformed values for one group.
    pub fn group_means(&self, group: &str, transform: Transform) -> Result<Vec<f64>> {
        let rows: Vec<&Vec<f64>> = self
            .rows
            .iter()
            .filter(|(g, _)| g == group)
            .map(|(_, v)| v)
            .collect();
        if rows.is_empty() {
            return Err(ToposError::Substrate(format!(
                "group `{group}` has no rows"
            )));
        }
        let f = |x: f64| match transform {
            Transform::Log1p => x.ln_1p(),
            Transform::Identity => x,
            Transform::FractionPositive => f64::from(u8::from(x > 0.0)),
        };
        Ok((0..self.markers.len())
            .map(|m| rows.iter().map(|r| f(r[m])).sum::<f64>() / rows.len() as f64)
            .collect())
    }
}

/// Compares a focus-marker index between two groups. The index is the mean
/// over focus markers, or their sum for fraction-positive panels.
pub fn group_mean_substitution(
    panel: &Panel,
    base_group: &str,
    target_group: &str,
    focus_markers: &[String],
    transform: Transform,
) -> Result<SubstrateResult> {
    if focus_markers.is_empty() {
        return Err(ToposError::Substrate("no focus markers".into()));
    }
    let focus: Vec<usize> = focus_markers
        .iter()
        .map(|m| panel.marker(m))
        .collect::<Result<_>>()?;
    let base = panel.group_means(base_group, transform)?;
    let target = panel.group_means(target_group, transform)?;
    let index = |means: &[f64]| {
        let s: f64 = focus.iter().map(|&i| means[i]).sum();
        match transform {
            Transform::FractionPositive => s,
            _ => s / focus.len() as f64,
        }
    };
    let baseline = index(&base);
    let counterfactual = index(&target);
    let mut details = BTreeMap::new();
    let mut table = Vec::new();
    for (i, m) in panel.markers.iter().enumerate() {
        details.insert(format!("shift_{m}"), target[i] - base[i]);
        table.push(TableRow {
            label: m.clone(),
            values: BTreeMap::from([
                (base_group.to_string(), base[i]),
                (target_group.to_string(), target[i]),
                ("shift".into(), target[i] - base[i]),
            ]),
        });
    }
    Ok(SubstrateResult {
        kind: SubstrateKind::GroupMeanSubstitution,
        baseline,
        counterfactual,
        effect: Effect::between(baseline, counterfactual)?,
        details,
        table,
        co_shift: Vec::new(),
        input_hashes: BTreeMap::new(),
        grounding: Grounding::default(),
    })
}

/// Edge score `|shift_A| * |shift_B|`, ranked high to low.
pub fn co_shift_scores(
    result: &SubstrateResult,
    edges: &[(String, String)],
) -> Result<Vec<CoShift>> {
    let shift = |m: &str| {
        result
            .details
            .iter()
            .find(|(k, _)| {
                k.strip_prefix("shift_")
                    .is_some_and(|n| n.eq_ignore_ascii_case(m))
            })
            .map(|(_, v)| *v)
            .ok_or_else(|| ToposError::Substrate(format!("no shift recorded for `{m}`")))
    };
    let mut out = edges
        .iter()
        .map(|(a, b)| {
            Ok(CoShift {
                from: a.clone(),
                to: b.clone(),
                score: shift(a)?.abs() * shift(b)?.abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| (&x.from, &x.to).cmp(&(&y.from, &y.to)))
    });
    Ok(out)
}

/// Substrate reference inside an intervention spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstrateSpec {
    pub kind: SubstrateKind,
    pub path: PathBuf,
    /// Column renames, e.g. `{"lat": "latitude"}`.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub m_base: Option<f64>,
    #[serde(default)]
    pub m_cf: Option<f64>,
    #[serde(default)]
    pub base_group: Option<String>,
    #[serde(default)]
    pub target_group: Option<String>,
    #[serde(default)]
    pub focus_markers: Vec<String>,
    #[serde(default)]
    pub transform: Option<Transform>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub grounding: Grounding,
}

impl SubstrateSpec {
    fn column<'a>(&'a self, name: &'a str) -> &'a str {
        self.columns.get(name).map(String::as_str).unwrap_or(name)
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>, String)> {
    let bytes = std::fs::read(path).map_err(|e| ToposError::io(path, e))?;
    let hash = sha256_hex(&bytes);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ToposError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| ToposError::Parse(format!("{}: {e}", path.display())))?;
    Ok((headers, rows, hash))
}

fn col_index(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        ToposError::Substrate(format!("{}: missing column `{name}`", path.display()))
    })
}

fn number(raw: &str, path: &Path, line: usize) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| {
        ToposError::Parse(format!(
            "{} row {line}: `{raw}` is not a number",
            path.display()
        ))
    })
}

fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| ToposError::Substrate(format!("substrate parameter `{name}` is required")))
}

/// Reads the substrate file (relative paths resolve against `base_dir`)
/// and evaluates it.
pub fn evaluate_substrate(spec: &SubstrateSpec, base_dir: &Path) -> Result<SubstrateResult> {
    let path = if spec.path.is_relative() {
        base_dir.join(&spec.path)
    } else {
        spec.path.clone()
    };
    let (headers, rows, hash) = read_csv(&path)?;
    let mut result = match spec.kind {
        SubstrateKind::ScaleMap => {
            let (lat, lon, value) = (
                col_index(&headers, spec.column("lat"), &path)?,
                col_index(&headers, spec.column("lon"), &path)?,
                col_index(&headers, spec.column("value"), &path)?,
            );
            let grid = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(GridCell {
                        lat: number(&r[lat], &path, i + 2)?,
                        lon: number(&r[lon], &path, i + 2)?,
                        value: number(&r[value], &path, i + 2)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            scale_map_counterfactual(
                &grid,
                required(&spec.m_base, "m_base")?,
                required(&spec.m_cf, "m_cf")?,
            )?
        }
        SubstrateKind::IndexSubstitution => {
            let station = col_index(&headers, spec.column("station"), &path)?;
            let anomaly = col_index(&headers, spec.column("anomaly_pct"), &path)?;
            let stations = rows
                .iter()
                .enumerate()
                .map(|(i, r)| Ok((r[station].to_string(), number(&r[anomaly], &path, i + 2)?)))
                .collect::<Result<Vec<_>>>()?;
            index_substitution(&stations)?
        }
        SubstrateKind::GroupMeanSubstitution => {
            let group = col_index(&headers, spec.column("group"), &path)?;
            let marker_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != group).collect();
            let panel = Panel {
                markers: marker_cols.iter().map(|&i| headers[i].clone()).collect(),
                rows: rows
                    .iter()
                    .enumerate()
                    .map(|(n, r)| {
                        let values = marker_cols
                            .iter()
                            .map(|&i| number(&r[i], &path, n + 2))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((r[group].to_string(), values))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let mut r = group_mean_substitution(
                &panel,
                &required(&spec.base_group, "base_group")?,
                &required(&spec.target_group, "target_group")?,
                &spec.focus_markers,
                spec.transform.unwrap_or(Transform::Log1p),
            )?;
            r.co_shift = co_shift_scores(&r, &spec.edges)?;
            r
        }
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    result.input_hashes.insert(name, hash);
    result.grounding = spec.grounding;
    Ok(result)
}
