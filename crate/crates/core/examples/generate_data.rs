//! Regenerates the bundled data files under `data/` at the workspace root:
//! the X3D-M model description, the ZCU102 device file and the resource
//! calibration defaults.
//!
//! Run from the workspace root: `cargo run -p sdf3d --example generate_data`

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    std::fs::create_dir_all(&root)?;

    let graph = sdf3d::zoo::x3d_m();
    std::fs::write(root.join("x3d_m.json"), sdf3d::model::to_json(&graph))?;

    let device = sdf3d::perf::DeviceSpec {
        name: "zcu102".to_string(),
        dsp: 2520,
        bram18k: 1824,
        lut: 274_080,
        ff: 548_160,
        bandwidth: 64,
        clock: 142e6,
        t_reconfig: 0.05,
    };
    std::fs::write(
        root.join("zcu102.json"),
        serde_json::to_string_pretty(&device).expect("device json"),
    )?;

    let calib = sdf3d::hwblocks::Calibration::default();
    std::fs::write(
        root.join("calibration.json"),
        serde_json::to_string_pretty(&calib).expect("calibration json"),
    )?;

    println!("wrote {}", root.display());
    Ok(())
}
