//! The 50-song MusicLab-style market and the small example markets.
//!
//! Two CSV files describe a dataset: products (`index,quality,appeal`) and
//! positions (`position,visibility`). Indices are 1-based in the files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MarketSpec;

pub const PRODUCTS_FILE: &str = "products.csv";
pub const VISIBILITY_FILE: &str = "visibility.csv";

const MUSICLAB_PRODUCTS: &str = include_str!("../data/musiclab_products.csv");
const MUSICLAB_VISIBILITY: &str = include_str!("../data/musiclab_visibility.csv");

const MUSICLAB_PROVENANCE: &str = "50 songs; qualities and appeals of the independent setting as \
published. The published visibility table labels two rows as position 25 and none as 49; the \
second column is read as positions 26-50 in printed order, which yields exactly 50 values with \
no gap (rows printed as 25..48 are shifted down by one).";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Appeal and quality drawn independently.
    Independent,
    /// Appeal replaced by `1 - q_i`.
    AntiCorrelated,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Independent => f.write_str("independent"),
            Setting::AntiCorrelated => f.write_str("anti_correlated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub market: MarketSpec,
    pub setting: Setting,
    pub provenance: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct ProductRow {
    index: usize,
    quality: f64,
    appeal: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct VisibilityRow {
    position: usize,
    visibility: f64,
}

fn schema(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

/// Parses rows and checks that the index column runs 1, 2, ... in order.
fn parse_rows<T: for<'de> Deserialize<'de>>(
    text: &str,
    file: &str,
    index_of: impl Fn(&T) -> usize,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, rec) in reader.deserialize::<T>().enumerate() {
        // header is row 1
        let row = k + 2;
        let rec = rec.map_err(|e| schema(file, row, e.to_string()))?;
        if index_of(&rec) != k + 1 {
            return Err(schema(
                file,
                row,
                format!("expected index {}, found {}", k + 1, index_of(&rec)),
            ));
        }
        rows.push(rec);
    }
    Ok(rows)
}

/// Builds a bundle from the two CSV texts.
pub fn parse_dataset(products: &str, visibility: &str, setting: Setting) -> Result<DatasetBundle> {
    let prows: Vec<ProductRow> = parse_rows(products, PRODUCTS_FILE, |r: &ProductRow| r.index)?;
    let vrows: Vec<VisibilityRow> =
        parse_rows(visibility, VISIBILITY_FILE, |r: &VisibilityRow| r.position)?;
    if prows.is_empty() {
        return Err(schema(PRODUCTS_FILE, 1, "no products"));
    }
    if vrows.len() != prows.len() {
        return Err(schema(
            VISIBILITY_FILE,
            vrows.len() + 1,
            format!("{} positions for {} products", vrows.len(), prows.len()),
        ));
    }
    for (k, r) in prows.iter().enumerate() {
        if !(r.quality > 0.0 && r.quality <= 1.0) {
            return Err(schema(
                PRODUCTS_FILE,
                k + 2,
                format!("quality {} outside (0, 1]", r.quality),
            ));
        }
        if !(r.appeal > 0.0 && r.appeal.is_finite()) {
            return Err(schema(
                PRODUCTS_FILE,
                k + 2,
                format!("appeal {} must be positive", r.appeal),
            ));
        }
        if setting == Setting::AntiCorrelated && r.quality >= 1.0 {
            return Err(schema(
                PRODUCTS_FILE,
                k + 2,
                "quality 1 leaves no appeal in the anti-correlated setting",
            ));
        }
    }
    for (k, r) in vrows.iter().enumerate() {
        if !(r.visibility > 0.0 && r.visibility.is_finite()) {
            return Err(schema(
                VISIBILITY_FILE,
                k + 2,
                format!("visibility {} must be positive", r.visibility),
            ));
        }
    }
    let quality: Vec<f64> = prows.iter().map(|r| r.quality).collect();
    let appeal = match setting {
        Setting::Independent => prows.iter().map(|r| r.appeal).collect(),
        Setting::AntiCorrelated => quality.iter().map(|q| 1.0 - q).collect(),
    };
    let visibility = vrows.iter().map(|r| r.visibility).collect();
    Ok(DatasetBundle {
        market: MarketSpec::new(quality, appeal, visibility)?,
        setting,
        provenance: String::new(),
    })
}

/// Loads `products.csv` and `visibility.csv` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>, setting: Setting) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let products = std::fs::read_to_string(dir.join(PRODUCTS_FILE))?;
    let visibility = std::fs::read_to_string(dir.join(VISIBILITY_FILE))?;
    let mut bundle = parse_dataset(&products, &visibility, setting)?;
    bundle.provenance = format!("loaded from {}", dir.display());
    Ok(bundle)
}

/// CSV texts `(products, visibility)`. The appeal column holds the market's
/// appeals as they are, so an anti-correlated bundle writes `1 - q`.
pub fn to_csv(market: &MarketSpec) -> (String, String) {
    let mut products = String::from("index,quality,appeal\n");
    for (i, (q, a)) in market.quality().iter().zip(market.appeal()).enumerate() {
        products.push_str(&format!("{},{},{}\n", i + 1, q, a));
    }
    let mut visibility = String::from("position,visibility\n");
    for (j, v) in market.visibility().iter().enumerate() {
        visibility.push_str(&format!("{},{}\n", j + 1, v));
    }
    (products, visibility)
}

/// Writes a dataset directory readable by [`load_dataset`] with `Setting::Independent`.
pub fn save_dataset(dir: impl AsRef<Path>, market: &MarketSpec) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (products, visibility) = to_csv(market);
    std::fs::write(dir.join(PRODUCTS_FILE), products)?;
    std::fs::write(dir.join(VISIBILITY_FILE), visibility)?;
    Ok(())
}

/// The bundled 50-song market.
pub fn musiclab(setting: Setting) -> DatasetBundle {
    let mut bundle = parse_dataset(MUSICLAB_PRODUCTS, MUSICLAB_VISIBILITY, setting)
        .expect("bundled dataset is valid");
    bundle.provenance = MUSICLAB_PROVENANCE.to_string();
    bundle
}

fn spec(q: &[f64], a: &[f64], v: &[f64]) -> MarketSpec {
    MarketSpec::new(q.to_vec(), a.to_vec(), v.to_vec()).expect("builtin market is valid")
}

/// Small named markets: `five_song`, `six_song`, `example_7_1`, `example_7_2`.
pub fn builtin_examples() -> BTreeMap<&'static str, MarketSpec> {
    let mut m = BTreeMap::new();
    m.insert(
        "five_song",
        spec(
            &[0.80, 0.72, 0.68, 0.65, 0.60],
            &[0.38, 0.35, 0.46, 0.27, 0.62],
            &[0.80, 0.75, 0.69, 0.62, 0.58],
        ),
    );
    m.insert(
        "six_song",
        spec(
            &[0.80, 0.72, 0.65, 0.57, 0.52, 0.49],
            &[0.38, 0.36, 0.27, 0.60, 0.77, 0.78],
            &[0.80, 0.75, 0.62, 0.48, 0.40, 0.35],
        ),
    );
    m.insert("example_7_1", spec(&[1.0, 0.4], &[1.0, 0.3], &[1.0, 1.0]));
    // no appeals are given for this market; they do not enter φ* or the search
    m.insert(
        "example_7_2",
        spec(&[1.0, 0.261, 0.002], &[1.0, 1.0, 1.0], &[1.0, 0.720, 0.229]),
    );
    m
}

/// Resolves a builtin name, including `musiclab_independent` and
/// `musiclab_anti_correlated`.
pub fn builtin_market(name: &str) -> Option<MarketSpec> {
    match name {
        "musiclab_independent" => Some(musiclab(Setting::Independent).market),
        "musiclab_anti_correlated" => Some(musiclab(Setting::AntiCorrelated).market),
        _ => builtin_examples().remove(name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn musiclab_rows() {
        let ind = musiclab(Setting::Independent).market;
        assert_eq!(ind.n(), 50);
        assert_eq!(ind.quality()[0], 0.8);
        assert_eq!(ind.appeal()[0], 0.18581654);
        assert_eq!(ind.quality()[49], 0.08636);
        assert_eq!(ind.appeal()[49], 0.80257928);
        assert_eq!(ind.visibility()[0], 0.83);
        assert_eq!(ind.visibility()[24], 0.17013229);
        assert_eq!(ind.visibility()[25], 0.16583292);
        assert_eq!(ind.visibility()[49], 0.22057129);

        let anti = musiclab(Setting::AntiCorrelated).market;
        assert!((anti.appeal()[0] - 0.2).abs() < 1e-12);
        for (q, a) in anti.quality().iter().zip(anti.appeal()) {
            assert!((q + a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn visibility_has_bottom_uptick() {
        let v = musiclab(Setting::Independent).market.visibility().to_vec();
        let trough = v[29..40].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(trough < v[49]);
        // decreasing through the top of the list
        assert!(v[..10].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn builtins() {
        let b = builtin_examples();
        assert_eq!(b["five_song"].visibility(), &[0.80, 0.75, 0.69, 0.62, 0.58]);
        assert_eq!(
            b["six_song"].quality(),
            &[0.80, 0.72, 0.65, 0.57, 0.52, 0.49]
        );
        assert_eq!(b["example_7_2"].visibility(), &[1.0, 0.720, 0.229]);
        assert!(builtin_market("musiclab_anti_correlated").is_some());
        assert!(builtin_market("nope").is_none());
    }

    #[test]
    fn schema_errors_carry_row_numbers() {
        let vis = "position,visibility\n1,0.5\n2,0.4\n";
        let bad_value = "index,quality,appeal\n1,0.5,0.3\n2,1.5,0.3\n";
        match parse_dataset(bad_value, vis, Setting::Independent) {
            Err(Error::Schema { row, file, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(file, PRODUCTS_FILE);
            }
            other => panic!("{other:?}"),
        }
        let malformed = "index,quality,appeal\n1,0.5,abc\n2,0.5,0.3\n";
        assert!(matches!(
            parse_dataset(malformed, vis, Setting::Independent),
            Err(Error::Schema { row: 2, .. })
        ));
        let wrong_count = "index,quality,appeal\n1,0.5,0.3\n";
        assert!(matches!(
            parse_dataset(wrong_count, vis, Setting::Independent),
            Err(Error::Schema { .. })
        ));
        let skipped = "index,quality,appeal\n1,0.5,0.3\n3,0.5,0.3\n";
        assert!(matches!(
            parse_dataset(skipped, vis, Setting::Independent),
            Err(Error::Schema { row: 3, .. })
        ));
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let original = musiclab(Setting::Independent).market;
        save_dataset(dir.path(), &original).unwrap();
        let loaded = load_dataset(dir.path(), Setting::Independent).unwrap();
        assert_eq!(loaded.market, original);
        save_dataset(dir.path(), &loaded.market).unwrap();
        let again = load_dataset(dir.path(), Setting::Independent).unwrap();
        assert_eq!(again.market, original);
    }
}
