//! CSV emission and parsing for run artifacts.
//!
//! Every file starts with the schema version line `# swarmfield-csv v1`.
//! Field snapshots additionally carry a grid header
//! `# grid nx ny x_min x_max y_min y_max t` followed by `ny` rows of `nx`
//! comma-separated values (row index = y, column index = x). Floats are
//! written with the shortest round-trip representation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::attrition::SurvivalTrace;
use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, ScalarField};
use crate::mfg::BoundsReport;
use crate::oracle::{AgentTrace, DiracReport};
use crate::ot::SweepTable;
use crate::scalar::Scalar;

pub const CSV_VERSION_HEADER: &str = "# swarmfield-csv v1";

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Write a scalar field snapshot at time `t`.
pub fn write_field_snapshot<T: Scalar>(path: &Path, field: &ScalarField<T>, t: T) -> Result<()> {
    let g = field.grid();
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(
        out,
        "# grid {} {} {} {} {} {} {}",
        g.nx, g.ny, g.x_min, g.x_max, g.y_min, g.y_max, t
    )?;
    for iy in 0..g.ny {
        let mut line = String::new();
        for ix in 0..g.nx {
            if ix > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", field.at(ix, iy)));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read back a snapshot written by [`write_field_snapshot`].
pub fn read_field_snapshot<T: Scalar>(path: &Path) -> Result<(ScalarField<T>, T)> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let version = lines
        .next()
        .ok_or_else(|| Error::Format("empty snapshot file".into()))??;
    if version.trim() != CSV_VERSION_HEADER {
        return Err(Error::Format(format!("unexpected version line: {version}")));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("missing grid header".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 9 || parts[0] != "#" || parts[1] != "grid" {
        return Err(Error::Format(format!("malformed grid header: {header}")));
    }
    let nx: usize = parts[2].parse().map_err(|_| Error::Format("bad nx".into()))?;
    let ny: usize = parts[3].parse().map_err(|_| Error::Format("bad ny".into()))?;
    let nums: Vec<f64> = parts[4..9]
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s}"))))
        .collect::<Result<_>>()?;
    let grid = Grid::new(
        T::from_f(nums[0]),
        T::from_f(nums[1]),
        T::from_f(nums[2]),
        T::from_f(nums[3]),
        nx,
        ny,
    )?;
    let t = T::from_f(nums[4]);

    let mut values = vec![T::zero(); nx * ny];
    for iy in 0..ny {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("snapshot truncated at row {iy}")))??;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != nx {
            return Err(Error::Format(format!(
                "row {iy} has {} columns, expected {nx}",
                cells.len()
            )));
        }
        for (ix, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value '{cell}' at ({ix},{iy})")))?;
            values[iy * nx + ix] = T::from_f(v);
        }
    }
    Ok((ScalarField::from_values(grid, values)?, t))
}

/// Density snapshot (same layout as a scalar snapshot).
pub fn write_density_snapshot<T: Scalar>(path: &Path, d: &DensityField<T>, t: T) -> Result<()> {
    write_field_snapshot(path, d.as_scalar(), t)
}

/// Survival trace: `t, w2_def_att_sq, w2_att_hvu_sq, d_att, d_h, Q, P`.
pub fn write_trace<T: Scalar>(path: &Path, trace: &SurvivalTrace<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "t,w2_def_att_sq,w2_att_hvu_sq,d_att,d_h,Q,P")?;
    for k in 0..trace.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            trace.times[k],
            trace.w2_def_att[k],
            trace.w2_att_hvu[k],
            trace.d_att[k],
            trace.d_h[k],
            trace.q[k],
            trace.p[k]
        )?;
    }
    Ok(())
}

/// Outer-iteration residual history: `iteration, l1_change`.
pub fn write_residuals<T: Scalar>(path: &Path, residuals: &[T]) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "iteration,l1_change")?;
    for (i, r) in residuals.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, r)?;
    }
    Ok(())
}

/// Bounds report: `t, min_m, max_m, lower_envelope, upper_envelope, violations`.
pub fn write_bounds_report<T: Scalar>(path: &Path, report: &BoundsReport<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(
        out,
        "# k_drift {} k_w {} k_used {} slack {} min_m0 {} max_m0 {}",
        report.k_drift, report.k_w, report.k_used, report.slack, report.min_m0, report.max_m0
    )?;
    writeln!(out, "t,min_m,max_m,lower_envelope,upper_envelope,violations")?;
    for k in 0..report.times.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            report.times[k],
            report.min_m[k],
            report.max_m[k],
            report.lower_envelope[k],
            report.upper_envelope[k],
            report.violations[k]
        )?;
    }
    Ok(())
}

/// Distance-sweep table: `sweep_value, <column...>`.
pub fn write_sweep_table<T: Scalar>(path: &Path, table: &SweepTable<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "sweep_value,{}", table.columns.join(","))?;
    for (s, row) in table.sweep_values.iter().zip(&table.rows) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{},{}", s, cells.join(","))?;
    }
    Ok(())
}

/// Agent positions in long format: `t, kind, id, x, y`.
pub fn write_agent_positions<T: Scalar>(path: &Path, trace: &AgentTrace<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "t,kind,id,x,y")?;
    for (j, &t) in trace.times.iter().enumerate() {
        for (i, pos) in trace.attackers[j].iter().enumerate() {
            writeln!(out, "{t},att,{i},{},{}", pos.0, pos.1)?;
        }
        for (k, pos) in trace.defenders[j].iter().enumerate() {
            writeln!(out, "{t},def,{k},{},{}", pos.0, pos.1)?;
        }
    }
    Ok(())
}

/// Per-attacker survival: `t, Q_0, Q_1, ...`.
pub fn write_agent_q<T: Scalar>(path: &Path, trace: &AgentTrace<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    let names: Vec<String> = (0..trace.n_attackers()).map(|i| format!("Q_{i}")).collect();
    writeln!(out, "t,{}", names.join(","))?;
    for (j, &t) in trace.times.iter().enumerate() {
        let cells: Vec<String> = trace.q[j].iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{t},{}", cells.join(","))?;
    }
    Ok(())
}

/// HVU survival: `t, P`.
pub fn write_agent_p<T: Scalar>(path: &Path, trace: &AgentTrace<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "t,P")?;
    for (&t, &p) in trace.times.iter().zip(&trace.p) {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

/// Micro/macro consistency report: `t, q_agent, q_pop, rel_dev`.
pub fn write_dirac_report<T: Scalar>(path: &Path, report: &DiracReport<T>) -> Result<()> {
    let mut out = open_out(path)?;
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "# max_rel_dev {}", report.max_rel_dev)?;
    writeln!(out, "t,q_agent,q_pop,rel_dev")?;
    for k in 0..report.times.len() {
        let (a, p) = (report.q_agent[k], report.q_pop[k]);
        writeln!(out, "{},{},{},{}", report.times[k], a, p, (a - p).abs() / a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrition::AttritionParams;
    use crate::grid::gaussian_density;
    use approx::assert_relative_eq;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("swarmfield-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn snapshot_roundtrip_is_exact() {
        let grid = Grid::new(-5.0, 5.0, -5.0, 5.0, 12, 9).unwrap();
        let rho = gaussian_density(grid, (0.5, -1.0), 0.7).unwrap();
        let path = tmpdir().join("snap.csv");
        write_density_snapshot(&path, &rho, 1.25).unwrap();
        let (back, t) = read_field_snapshot::<f64>(&path).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(back.grid(), rho.grid());
        for (a, b) in back.values().iter().zip(rho.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(CSV_VERSION_HEADER));
    }

    #[test]
    fn snapshot_reader_rejects_malformed_files() {
        let dir = tmpdir();
        let p = dir.join("bad.csv");
        std::fs::write(&p, "nonsense\n").unwrap();
        assert!(read_field_snapshot::<f64>(&p).is_err());
        std::fs::write(&p, format!("{CSV_VERSION_HEADER}\n# grid 4 4 0 1 0 1 0\n1,2\n")).unwrap();
        assert!(read_field_snapshot::<f64>(&p).is_err());
    }

    #[test]
    fn trace_file_has_expected_columns() {
        let times: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let att = AttritionParams::new(2.0, 5.0).unwrap();
        let hvu = AttritionParams::new(1.0, 5.0).unwrap();
        let trace = SurvivalTrace::from_distances(
            times,
            vec![9.0, 8.0, 6.0, 4.0, 2.0],
            vec![25.0, 16.0, 9.0, 4.0, 1.0],
            &att,
            &hvu,
        )
        .unwrap();
        let path = tmpdir().join("trace.csv");
        write_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_VERSION_HEADER);
        assert_eq!(lines.next().unwrap(), "t,w2_def_att_sq,w2_att_hvu_sq,d_att,d_h,Q,P");
        assert_eq!(lines.count(), 5);
        // Q column round-trips.
        let row: Vec<f64> = text
            .lines()
            .nth(3)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_relative_eq!(row[5], trace.q[1], max_relative = 1e-15);
    }
}
