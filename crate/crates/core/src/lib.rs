//! Component-based peak finding (CPF) clustering for data with mixed numerical
//! and categorical attributes.
//!
//! The pipeline builds a mutual k-nearest-neighbor graph, splits it into
//! connected component sets (isolated vertices become outliers), runs density
//! peak finding inside every component and picks the number of centers per
//! component from the conductance of the induced cuts.
//!
//! ```no_run
//! use cpf::{dataset, pipeline};
//!
//! let table = dataset::load_table("data.csv", &dataset::LoadOptions::default())?;
//! let model = dataset::fit_encoding(&table, dataset::WeightScheme::W1)?;
//! let data = dataset::encode(&table, &model)?;
//! let result = pipeline::cluster(&data, &pipeline::CpfParams::new(8))?;
//! println!("{} clusters", result.cluster_count);
//! # Ok::<(), cpf::CpfError>(())
//! ```

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metric;
pub mod neighbors;
pub mod peaks;
pub mod pipeline;
pub mod selection;
pub mod validation;

pub use error::{CpfError, Result};

/// Formats a float with 17 significant digits in the style of C's `%.17g`,
/// independent of locale.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
