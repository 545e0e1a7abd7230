//! Compares analytic gradients with central differences on a tiny model.

use mrs::autonet::{self, init_params, Dims, Objective};
use mrs::cube::Patch;
use mrs::masking::{self, Strategy};
use mrs::rng;
use rand::Rng;

fn main() -> mrs::Result<()> {
    let dims = Dims {
        bands: 4,
        patch: 2,
        width: 3,
        hidden: 3,
        classes: 2,
    };
    let step = 1e-5;
    let mut r = rng::stream(1, &[]);
    let mut params = init_params(dims, 1);
    for v in params.values_mut() {
        *v += r.gen_range(-0.5..0.5);
    }
    let patch = Patch::from_data(4, 2, (0..16).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    let plan = masking::draw_plan(Strategy::Mrs, &patch, 0.5, &mut r)?;

    for (name, objective) in [
        ("reconstruction", Objective::Reconstruction(&plan)),
        ("classification", Objective::Classification(2)),
    ] {
        let (loss, grad) = autonet::backward(&params, &patch, objective)?;
        let mut worst: f64 = 0.0;
        for k in 0..params.values().len() {
            let mut p = params.clone();
            p.values_mut()[k] += step;
            let up = autonet::objective_value(&p, &patch, objective)?;
            p.values_mut()[k] -= 2.0 * step;
            let down = autonet::objective_value(&p, &patch, objective)?;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.values[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!(
            "{name}: loss {loss:.6}, {} parameters, max relative error {worst:.2e}",
            params.values().len()
        );
    }
    Ok(())
}
