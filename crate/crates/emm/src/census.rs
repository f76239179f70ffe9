//! Census-style tabular data: 7 dense and 33 categorical columns plus two
//! binary labels (high income, never married).
//!
//! Rows are drawn from a fixed latent model. A small set of latent factors
//! drives the observed columns and both labels, so the labels are related
//! without being copies of each other. The latent model is the same for
//! every seed; the seed picks the sample.

use emm_core::data::{ColumnRole, ColumnSpec, FeatureSpec, DEFAULT_EMBEDDING_DIM};
use emm_core::rng::{self, Rng};

pub const DENSE_COLUMNS: [&str; 7] = [
    "age",
    "wage_per_hour",
    "capital_gains",
    "capital_losses",
    "dividends",
    "num_persons_worked",
    "weeks_worked",
];

pub const SPARSE_COLUMNS: [&str; 33] = [
    "class_of_worker",
    "industry_code",
    "occupation_code",
    "education",
    "enrolled_in_edu",
    "major_industry",
    "major_occupation",
    "race",
    "hispanic_origin",
    "sex",
    "union_member",
    "unemployment_reason",
    "employment_status",
    "tax_filer_status",
    "previous_region",
    "previous_state",
    "household_detail",
    "household_summary",
    "migration_msa",
    "migration_region",
    "migration_within_region",
    "same_house_last_year",
    "migration_sunbelt",
    "family_under_18",
    "father_birth_country",
    "mother_birth_country",
    "birth_country",
    "citizenship",
    "self_employed",
    "veterans_questionnaire",
    "veterans_benefits",
    "year",
    "business_owner",
];

pub const INCOME: &str = "income";
pub const MARITAL: &str = "marital";

const LATENT: usize = 6;
const STRUCTURE_SEED: u64 = 0x00CE_1505;

/// A header plus string rows, ready for CSV or for encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn feature_spec() -> FeatureSpec {
    let mut columns: Vec<ColumnSpec> = DENSE_COLUMNS
        .iter()
        .map(|c| ColumnSpec {
            name: (*c).into(),
            role: ColumnRole::Dense,
        })
        .collect();
    columns.extend(SPARSE_COLUMNS.iter().map(|c| ColumnSpec {
        name: (*c).into(),
        role: ColumnRole::Sparse,
    }));
    for t in [INCOME, MARITAL] {
        columns.push(ColumnSpec {
            name: format!("label_{t}"),
            role: ColumnRole::Label(t.into()),
        });
    }
    FeatureSpec {
        columns,
        embedding_dim: DEFAULT_EMBEDDING_DIM,
    }
}

struct Structure {
    /// Per dense column: loading on each latent factor.
    dense: Vec<[f64; LATENT]>,
    /// Per sparse column: one loading vector per category.
    sparse: Vec<Vec<[f64; LATENT]>>,
}

fn structure() -> Structure {
    let mut s = rng::stream(STRUCTURE_SEED, 0);
    let mut loading = |scale: f64| {
        let mut v = [0.0; LATENT];
        for x in &mut v {
            *x = scale * rng::normal(&mut s);
        }
        v
    };
    let dense = (0..DENSE_COLUMNS.len()).map(|_| loading(1.0)).collect();
    let mut sizes = rng::stream(STRUCTURE_SEED, 1);
    let sparse = (0..SPARSE_COLUMNS.len())
        .map(|_| {
            let k = sizes.gen_range(2..=12);
            (0..k).map(|_| loading(0.8)).collect()
        })
        .collect();
    Structure { dense, sparse }
}

fn dot(a: &[f64; LATENT], z: &[f64; LATENT]) -> f64 {
    a.iter().zip(z).map(|(p, q)| p * q).sum()
}

/// Label scores before thresholding. Both depend on factors 0 and 1.
fn label_scores(z: &[f64; LATENT]) -> (f64, f64) {
    let income = 1.1 * z[1] + 0.8 * z[2] + 0.5 * z[0] - 0.35 * z[0] * z[0] + 0.3 * z[1] * z[2];
    let marital = -1.2 * z[0] - 0.7 * z[3] + 0.4 * z[1] + 0.25 * z[3] * z[4];
    (income, marital)
}

/// Positive rates of the two labels.
pub const INCOME_RATE: f64 = 0.15;
pub const MARITAL_RATE: f64 = 0.4;

fn quantile(values: &[f64], upper_fraction: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((1.0 - upper_fraction) * sorted.len() as f64) as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Draws `rows` census-style rows.
pub fn generate(rows: usize, seed: u64) -> Table {
    let st = structure();
    let mut s = rng::stream(seed, 0xC3_5A);
    let mut latents = Vec::with_capacity(rows);
    let mut scores = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut z = [0.0; LATENT];
        for v in &mut z {
            *v = rng::normal(&mut s);
        }
        let (a, b) = label_scores(&z);
        scores.push((a + 0.6 * rng::normal(&mut s), b + 0.6 * rng::normal(&mut s)));
        latents.push(z);
    }
    let income: Vec<f64> = scores.iter().map(|p| p.0).collect();
    let marital: Vec<f64> = scores.iter().map(|p| p.1).collect();
    let (ti, tm) = (quantile(&income, INCOME_RATE), quantile(&marital, MARITAL_RATE));

    let mut header: Vec<String> = DENSE_COLUMNS.iter().map(|c| (*c).to_string()).collect();
    header.extend(SPARSE_COLUMNS.iter().map(|c| (*c).to_string()));
    header.push(format!("label_{INCOME}"));
    header.push(format!("label_{MARITAL}"));

    let mut out = Vec::with_capacity(rows);
    for (r, z) in latents.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        for (c, w) in st.dense.iter().enumerate() {
            let v = dot(w, z) + 0.5 * rng::normal(&mut s);
            // A few heavy-tailed money columns, as in census extracts.
            let v = if (2..=4).contains(&c) {
                (v.max(0.0)).powi(2) * 100.0
            } else {
                v
            };
            row.push(format!("{v:.4}"));
        }
        for (c, cats) in st.sparse.iter().enumerate() {
            let mut best = (0, f64::NEG_INFINITY);
            for (k, w) in cats.iter().enumerate() {
                let u: f64 = s.gen_range(1e-12..1.0);
                let gumbel = -(-u.ln()).ln();
                let v = dot(w, z) + gumbel;
                if v > best.1 {
                    best = (k, v);
                }
            }
            row.push(format!("c{c}_{}", best.0));
        }
        row.push(if scores[r].0 > ti { "1" } else { "0" }.into());
        row.push(if scores[r].1 > tm { "1" } else { "0" }.into());
        out.push(row);
    }
    Table { header, rows: out }
}
