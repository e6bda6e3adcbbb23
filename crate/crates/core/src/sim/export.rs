//! CSV export of recorded streams, one file per sensor.

use std::path::Path;

use csv::Writer;

use super::generate::Simulation;
use crate::error::{Error, Result};
use crate::lie::logv;
use crate::metrics::{write_trajectory_csv, TrajectoryRow};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write<P: AsRef<Path>>(path: P, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `imu.csv`, `gnss.csv`, `pvt.csv`, `odometry.csv`, `speed.csv` and
/// `truth.csv` (100 Hz) into `dir`. Time columns are seconds since scenario start.
pub fn export_streams(sim: &Simulation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let s = &sim.streams;
    write(
        dir.join("imu.csv"),
        &["t_s", "accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"],
        s.imu.iter().map(|m| vec![m.t, m.accel.x, m.accel.y, m.accel.z, m.gyro.x, m.gyro.y, m.gyro.z]),
    )?;
    write(
        dir.join("gnss.csv"),
        &[
            "t_s", "sat_id", "sat_x", "sat_y", "sat_z", "sat_vx", "sat_vy", "sat_vz", "pseudorange_m", "doppler_hz", "cn0_dbhz",
            "elevation_deg",
        ],
        s.gnss.iter().flat_map(|e| {
            e.sats.iter().map(move |o| {
                vec![
                    e.t,
                    o.sat_id as f64,
                    o.sat_pos.x,
                    o.sat_pos.y,
                    o.sat_pos.z,
                    o.sat_vel.x,
                    o.sat_vel.y,
                    o.sat_vel.z,
                    o.pseudorange_m,
                    o.doppler_hz,
                    o.cn0_dbhz,
                    o.elevation_rad.to_degrees(),
                ]
            })
        }),
    )?;
    write(
        dir.join("pvt.csv"),
        &["t_s", "x_e", "y_e", "z_e", "vN", "vE", "vD", "sd_x", "sd_y", "sd_z", "sd_vN", "sd_vE", "sd_vD"],
        s.pvt.iter().map(|m| {
            let mut row = vec![m.t];
            row.extend(m.position.iter());
            row.extend(m.velocity_ned.iter());
            row.extend(m.std_devs.iter());
            row
        }),
    )?;
    let mut odo = Vec::with_capacity(s.odometry.len());
    for m in &s.odometry {
        let xi = logv(&m.delta)?;
        let mut row = vec![m.t_i, m.t_j];
        row.extend(xi.iter());
        odo.push(row);
    }
    write(dir.join("odometry.csv"), &["t_i_s", "t_j_s", "rho_x", "rho_y", "rho_z", "phi_x", "phi_y", "phi_z"], odo.into_iter())?;
    write(
        dir.join("speed.csv"),
        &["t_s", "v_x", "v_y"],
        s.speed.iter().map(|m| vec![m.t, m.v2d.x, m.v2d.y]),
    )?;
    let n = (sim.truth.duration_s * 100.0).floor() as usize;
    let mut truth = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let x = sim.truth.state(k as f64 / 100.0);
        truth.push(TrajectoryRow::from_state(&x)?);
    }
    write_trajectory_csv(&dir.join("truth.csv"), &truth)
}
