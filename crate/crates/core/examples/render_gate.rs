//! Renders the procedural gate scene from the start pose to `gate.ppm` / `gate.pfm`.

use gradnav::gsplat::{make_gate_scene, render, write_pfm, write_ppm, Camera, GateLayout, Pose};

fn main() -> std::io::Result<()> {
    let scene = make_gate_scene(&GateLayout::default(), 0);
    let cam = Camera::default();
    let frame = render(&scene, &Pose::level([0.0, 0.0, 1.3]), &cam);
    let out = std::env::args().nth(1).unwrap_or_else(|| "gate".into());
    write_ppm(format!("{out}.ppm"), &frame.rgb)?;
    write_pfm(format!("{out}.pfm"), &frame.depth)?;
    let centre = frame.depth.at(cam.height / 2, cam.width / 2);
    println!("{} gaussians; depth at image centre {centre:.2} m; wrote {out}.ppm and {out}.pfm", scene.gaussians.len());
    Ok(())
}
