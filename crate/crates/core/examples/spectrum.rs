//! Minimal end-to-end run: sample a model, estimate the cFIM, report the
//! spectrum.

use covgeom::*;

fn main() -> Result<()> {
    let model = DensityModel::standard_normal(2);
    let samples = model.sample(50_000, 7)?;
    let g = empirical_cfim(&score::ScoreField::for_model(&model), &samples)?;
    println!("G-entropy: {}", g.g_entropy());
    println!("gap after eigenvalue {}", g.spectrum().gap_index);
    Ok(())
}
