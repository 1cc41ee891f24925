//! How far apart do the two domains look to threshold classifiers as the
//! target rotates away from the source?
//!
//! ```text
//! cargo run --example h_divergence
//! ```

use saf_lab::data::{generate, Domain, DomainSpec};
use saf_lab::metrics::stump_h_divergence;

fn main() -> saf_lab::Result<()> {
    let source = generate(&DomainSpec::default(), Domain::Source)?;
    println!("{:>9} {:>8}", "rotation", "d_H");
    for rotation_deg in [0.0, 10.0, 20.0, 35.0, 50.0, 90.0, 180.0] {
        let target = generate(&DomainSpec { rotation_deg, ..DomainSpec::default() }, Domain::Target)?;
        let d = stump_h_divergence(&source.features, &target.features)?;
        println!("{rotation_deg:>9.1} {d:>8.4}");
    }
    let far = generate(&DomainSpec { translation: [20.0, 0.0], ..DomainSpec::default() }, Domain::Target)?;
    println!("translated by 20: {:.4}", stump_h_divergence(&source.features, &far.features)?);
    Ok(())
}
