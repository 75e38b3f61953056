//! Gradient-magnitude attribution averaged per particle type, with CSV and
//! SVG heatmap export. Values are taken with respect to the standardised
//! features the model consumes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::PMD_LEN;
use crate::graphset::{edge_feature_names, graph_feature_names, node_feature_names, FragmentGraph, Standardizer};
use crate::learn::{GraphInput, LearnError, Model, ModelConfig, ParamStore};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed matrix: {0}")]
    Malformed(String),
    #[error("no graphs to attribute")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub type_id: String,
    pub sigma0: f64,
    pub values: Vec<f64>,
}

/// Rows are types in ascending true strength; columns are features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<AttributionRow>,
}

/// Per-type mean of `|d prediction / d input|` over `graphs`, which must be
/// standardised already. Returns the PMD matrix (35 columns) and the
/// node/edge matrix (19 node columns then 9 edge columns, each a mean over
/// the graph's nodes or edges before the type mean).
pub fn attribute(
    config: &ModelConfig,
    params: &ParamStore,
    graphs: &[FragmentGraph],
) -> Result<(AttributionMatrix, AttributionMatrix), AttributionError> {
    if graphs.is_empty() {
        return Err(AttributionError::Empty);
    }
    let model = Model::new(config, params);
    // type_id -> (label, count, pmd sums, nef sums)
    let mut acc: BTreeMap<&str, (f64, usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let n_node = node_feature_names().len();
    let n_edge = edge_feature_names().len();
    for g in graphs {
        let x = GraphInput::from_graph(g)?;
        let grad = model.input_gradient(&x)?;
        let entry = acc
            .entry(&g.type_id)
            .or_insert_with(|| (g.label, 0, vec![0.0; PMD_LEN], vec![0.0; n_node + n_edge]));
        entry.1 += 1;
        for k in 0..PMD_LEN {
            entry.2[k] += grad.graph[k].abs();
        }
        let nodes = grad.nodes.nrows().max(1) as f64;
        for c in 0..n_node {
            entry.3[c] += grad.nodes.column(c).iter().map(|v| v.abs()).sum::<f64>() / nodes;
        }
        let edges = grad.edge_features.nrows();
        if edges > 0 {
            for c in 0..n_edge {
                entry.3[n_node + c] += grad.edge_features.column(c).iter().map(|v| v.abs()).sum::<f64>() / edges as f64;
            }
        }
    }
    let mut pmd_rows = Vec::new();
    let mut nef_rows = Vec::new();
    for (type_id, (sigma0, count, pmd, nef)) in acc {
        let n = count as f64;
        pmd_rows.push(AttributionRow {
            type_id: type_id.to_string(),
            sigma0,
            values: pmd.iter().map(|v| v / n).collect(),
        });
        nef_rows.push(AttributionRow {
            type_id: type_id.to_string(),
            sigma0,
            values: nef.iter().map(|v| v / n).collect(),
        });
    }
    let order = |rows: &mut Vec<AttributionRow>| {
        rows.sort_by(|a, b| a.sigma0.total_cmp(&b.sigma0).then_with(|| a.type_id.cmp(&b.type_id)))
    };
    order(&mut pmd_rows);
    order(&mut nef_rows);
    Ok((
        AttributionMatrix {
            columns: graph_feature_names()[..PMD_LEN].to_vec(),
            rows: pmd_rows,
        },
        AttributionMatrix {
            columns: node_feature_names().into_iter().chain(edge_feature_names()).collect(),
            rows: nef_rows,
        },
    ))
}

impl AttributionMatrix {
    /// Divides each column by its feature standard deviation, giving
    /// attributions per raw unit.
    pub fn to_raw_units(&self, std: &[f64]) -> Self {
        Self {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| AttributionRow {
                    values: r.values.iter().zip(std).map(|(v, s)| v / s).collect(),
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String, AttributionError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["type_id".to_string(), "sigma0".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.type_id.clone(), r.sigma0.to_string()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| AttributionError::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| AttributionError::Malformed(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, AttributionError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "type_id" || &header[1] != "sigma0" {
            return Err(AttributionError::Malformed("expected type_id,sigma0,<features>".into()));
        }
        let columns: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| AttributionError::Malformed(format!("{s}: {e}")));
            rows.push(AttributionRow {
                type_id: rec[0].to_string(),
                sigma0: num(&rec[1])?,
                values: rec.iter().skip(2).map(num).collect::<Result<_, _>>()?,
            });
        }
        Ok(Self { columns, rows })
    }

    /// Heatmap with features down the side and types, in ascending true
    /// strength, across. Columns named in `exclude` are not drawn. Every
    /// cell carries its exact value so the figure can be read back.
    pub fn heatmap_svg(&self, title: &str, exclude: &[&str]) -> String {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&c| !exclude.contains(&self.columns[c].as_str()))
            .collect();
        let (cell_w, cell_h, left, top) = (14.0, 12.0, 190.0, 40.0);
        let width = left + cell_w * self.rows.len() as f64 + 20.0;
        let height = top + cell_h * keep.len() as f64 + 70.0;
        let vmax = self
            .rows
            .iter()
            .flat_map(|r| keep.iter().map(move |&c| r.values[c]))
            .fold(0.0f64, f64::max);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">"#
        );
        let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(title));
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="12">{}</text>"#, xml_escape(title));
        for (yi, &c) in keep.iter().enumerate() {
            let y = top + cell_h * yi as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 4.0,
                y + cell_h * 0.8,
                xml_escape(&self.columns[c])
            );
            for (xi, row) in self.rows.iter().enumerate() {
                let v = row.values[c];
                let t = if vmax > 0.0 { v / vmax } else { 0.0 };
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{y}" width="{cell_w}" height="{cell_h}" fill="{}" data-type="{}" data-feature="{}" data-sigma0="{}" data-value="{}"/>"#,
                    left + cell_w * xi as f64,
                    colour(t),
                    xml_escape(&row.type_id),
                    xml_escape(&self.columns[c]),
                    row.sigma0,
                    v
                );
            }
        }
        let base = top + cell_h * keep.len() as f64;
        for (xi, row) in self.rows.iter().enumerate() {
            let x = left + cell_w * (xi as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" transform="rotate(90 {x} {})">{:.2}</text>"#,
                base + 6.0,
                base + 6.0,
                row.sigma0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">true characteristic strength (MPa)</text>"#,
            left + cell_w * self.rows.len() as f64 / 2.0,
            height - 6.0
        );
        s.push_str("</svg>\n");
        s
    }

    /// Reads back the matrix drawn by [`heatmap_svg`](Self::heatmap_svg).
    pub fn from_heatmap_svg(svg: &str) -> Result<Self, AttributionError> {
        let mut columns: Vec<String> = Vec::new();
        let mut rows: Vec<AttributionRow> = Vec::new();
        for tag in svg.split("<rect ").skip(1) {
            let attr = |name: &str| -> Result<String, AttributionError> {
                let key = format!("{name}=\"");
                let start = tag.find(&key).ok_or_else(|| AttributionError::Malformed(format!("missing {name}")))?
                    + key.len();
                let end = tag[start..].find('"').ok_or_else(|| AttributionError::Malformed(name.into()))?;
                Ok(xml_unescape(&tag[start..start + end]))
            };
            let num = |s: String| s.parse::<f64>().map_err(|e| AttributionError::Malformed(e.to_string()));
            let (ty, feature) = (attr("data-type")?, attr("data-feature")?);
            let (sigma0, value) = (num(attr("data-sigma0")?)?, num(attr("data-value")?)?);
            let col = match columns.iter().position(|c| *c == feature) {
                Some(k) => k,
                None => {
                    columns.push(feature);
                    columns.len() - 1
                }
            };
            let row = match rows.iter().position(|r| r.type_id == ty) {
                Some(k) => k,
                None => {
                    rows.push(AttributionRow {
                        type_id: ty,
                        sigma0,
                        values: Vec::new(),
                    });
                    rows.len() - 1
                }
            };
            if rows[row].values.len() != col {
                return Err(AttributionError::Malformed("cells out of order".into()));
            }
            rows[row].values.push(value);
        }
        Ok(Self { columns, rows })
    }
}

/// White to dark blue.
fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

pub fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&quot;", "\"").replace("&gt;", ">").replace("&lt;", "<").replace("&amp;", "&")
}

/// Raw-unit version of both matrices given the split standardisation.
pub fn raw_units(pmd: &AttributionMatrix, nef: &AttributionMatrix, st: &Standardizer) -> (AttributionMatrix, AttributionMatrix) {
    let nef_std: Vec<f64> = st.node_std.iter().chain(&st.edge_std).copied().collect();
    (pmd.to_raw_units(&st.graph_std[..PMD_LEN]), nef.to_raw_units(&nef_std))
}
