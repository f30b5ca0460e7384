//! Flies the scripted full-state pilot through the gate under the evaluation protocol.

use gradnav::env::EnvConfig;
use gradnav::gsplat::{make_gate_scene, GateLayout};
use gradnav::reward::RewardWeights;
use gradnav::train::{evaluate_with, reference_pilot};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = make_gate_scene(&GateLayout::default(), 0);
    let mut pilot = |env: &gradnav::env::NavEnv| Ok((reference_pilot(env), None));
    let r = evaluate_with(&EnvConfig::default(), &scene, &RewardWeights::default(), 10, 7, &mut pilot)?;
    for (i, d) in r.drones.iter().enumerate() {
        println!("drone {i}: success {} waypoints {} clearance {:.2} m reward {:.0}", d.success, d.waypoints_reached, d.min_clearance, d.reward);
    }
    println!("{}/{} successful, reward {:.0} ± {:.0}", r.successes, r.n, r.mean_reward, r.std_reward);
    Ok(())
}
