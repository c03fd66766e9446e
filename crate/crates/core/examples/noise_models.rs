//! Synthetic clusters under each label-noise model.
//!
//! `cargo run --release --example noise_models`

use anne::noisegen::{generate_ood_pool, ClassMap};
use anne::prelude::*;

fn flip_rate(ds: &Dataset) -> f64 {
    let truth = ds.true_labels().expect("generated data keeps its truth");
    truth.iter().zip(ds.noisy_labels()).filter(|(t, y)| t != y).count() as f64 / ds.len() as f64
}

fn main() -> Result<(), Error> {
    let spec = ClusterSpec::standard(7);
    let clean = generate_clusters(&spec)?;
    println!("{} samples, {} classes, d = {}", clean.len(), clean.class_count(), clean.dim());

    let sym = inject_symmetric(&clean, 0.5, 7)?;
    println!("symmetric 50%:      flipped {:.3}", flip_rate(&sym));

    let asym = inject_asymmetric(&clean, 0.4, &ClassMap::cyclic(10), 7)?;
    println!("asymmetric 40%:     flipped {:.3}", flip_rate(&asym));

    // flip probability drawn per sample, target = nearest other class centroid
    let idn = inject_instance_dependent(&clean, 0.4, 7)?;
    println!("instance-dep. 40%:  flipped {:.3}", flip_rate(&idn));

    let pool = generate_ood_pool(&spec, 2000)?;
    let open = inject_openset(&clean, &pool, 0.5, 0.6, 7)?;
    let ood = open.true_labels().unwrap().iter().filter(|&&t| t == open.ood_label()).count();
    println!("open-set rho .5:    flipped {:.3}, {} replaced by out-of-distribution features", flip_rate(&open), ood);

    // the same thing from a serialisable spec
    let spec_json = r#"{"kind": "symmetric", "eta": 0.2, "seed": 7}"#;
    let noise: NoiseSpec = serde_json::from_str(spec_json)?;
    println!("from JSON {spec_json}: flipped {:.3}", flip_rate(&noise.apply(&clean, None)?));
    Ok(())
}
