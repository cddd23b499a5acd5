use std::cmp::Ordering;
use std::fs::OpenOptions;
use std::path::Path;

use super::experiment::NfRow;
use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 10] = [
    "seed",
    "method",
    "s",
    "crossbar_size",
    "mitigation",
    "software_accuracy",
    "nonideal_accuracy",
    "mean_nf",
    "compression_rate",
    "wall_time_s",
];

pub const NF_COLUMNS: [&str; 5] = [
    "crossbar_size",
    "layer",
    "tiles",
    "mean_tile_nf",
    "mean_column_nf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub seed: u64,
    /// `none` for an unpruned model.
    pub method: String,
    pub s: f64,
    pub crossbar_size: usize,
    pub mitigation: String,
    pub software_accuracy: f64,
    pub nonideal_accuracy: f64,
    pub mean_nf: f64,
    pub compression_rate: f64,
    pub wall_time_s: f64,
}

impl ReportRow {
    /// Sort key: seed, method, s, size, mitigation.
    pub fn order(a: &Self, b: &Self) -> Ordering {
        a.seed
            .cmp(&b.seed)
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.s.total_cmp(&b.s))
            .then_with(|| a.crossbar_size.cmp(&b.crossbar_size))
            .then_with(|| a.mitigation.cmp(&b.mitigation))
    }

    fn record(&self) -> Result<Vec<String>> {
        let nums = [
            ("software_accuracy", self.software_accuracy),
            ("nonideal_accuracy", self.nonideal_accuracy),
            ("mean_nf", self.mean_nf),
            ("compression_rate", self.compression_rate),
            ("wall_time_s", self.wall_time_s),
            ("s", self.s),
        ];
        if let Some((name, v)) = nums.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("report column {name} = {v}")));
        }
        Ok(vec![
            self.seed.to_string(),
            self.method.clone(),
            sig6(self.s),
            self.crossbar_size.to_string(),
            self.mitigation.clone(),
            sig6(self.software_accuracy),
            sig6(self.nonideal_accuracy),
            sig6(self.mean_nf),
            sig6(self.compression_rate),
            sig6(self.wall_time_s),
        ])
    }
}

/// Renders `x` with 6 significant digits, in positional notation when the
/// exponent is in `-4..6` and scientific notation otherwise.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>, append: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fresh = !append
        || std::fs::metadata(path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header).map_err(csv_err(path))?;
    }
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the run report, sorting rows first. With `append`, rows are added
/// to an existing file and the header is written only if it is new.
pub fn write_report(path: &Path, rows: &[ReportRow], append: bool) -> Result<()> {
    let mut rows = rows.to_vec();
    rows.sort_by(ReportRow::order);
    let records = rows.iter().map(ReportRow::record).collect::<Result<_>>()?;
    write_rows(path, &REPORT_COLUMNS, records, append)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(REPORT_COLUMNS) {
        return Err(Error::Config(format!(
            "{}: unexpected report columns",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| {
                Error::Config(format!(
                    "{}: bad {} value {:?}",
                    path.display(),
                    REPORT_COLUMNS[i],
                    &rec[i]
                ))
            })
        };
        out.push(ReportRow {
            seed: f(0)? as u64,
            method: rec[1].to_string(),
            s: f(2)?,
            crossbar_size: f(3)? as usize,
            mitigation: rec[4].to_string(),
            software_accuracy: f(5)?,
            nonideal_accuracy: f(6)?,
            mean_nf: f(7)?,
            compression_rate: f(8)?,
            wall_time_s: f(9)?,
        });
    }
    Ok(out)
}

pub fn write_nf_table(path: &Path, rows: &[NfRow]) -> Result<()> {
    let records = rows
        .iter()
        .map(|r| {
            vec![
                r.crossbar_size.to_string(),
                r.layer.map_or_else(|| "all".into(), |l| l.to_string()),
                r.tiles.to_string(),
                sig6(r.mean_tile_nf),
                sig6(r.mean_column_nf),
            ]
        })
        .collect();
    write_rows(path, &NF_COLUMNS, records, false)
}
