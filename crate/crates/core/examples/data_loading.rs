//! Loads the bundled fixtures and a synthetic quadratic, and prints what
//! came out.

use kronfisher::data::{batch_iter, synth_quadratic};
use kronfisher::diagnostics::pca2;
use kronfisher::experiments::{iris, mnist_subset};

fn main() -> kronfisher::Result<()> {
    let splits = mnist_subset()?;
    let test = splits.test.as_ref().expect("bundled test split");
    println!("mnist train {} x {:?}, classes {:?}", splits.train.len(), splits.train.sample_shape(), splits.train.class_counts());
    println!("mnist test  {} x {:?}", test.len(), test.sample_shape());
    let batches = batch_iter(splits.train.len(), 64, 0, true)?;
    println!("{} batches of 64 (last {}), first indices {:?}", batches.len(), batches.last().map_or(0, Vec::len), &batches[0][..5]);

    let ds = iris()?;
    println!("iris {} x {}, classes {:?} {:?}", ds.len(), ds.feature_dim(), ds.class_names, ds.class_counts());
    let p = pca2(&ds.features)?;
    println!(
        "iris pca: explained {:.3} + {:.3} of {:.3}",
        p.explained_variance[0], p.explained_variance[1], p.total_variance
    );

    let (a, star) = synth_quadratic(5, 100.0, 0)?;
    println!("quadratic 5x5, trace {:.3}, theta* {star:.3?}", a.trace()?);
    Ok(())
}
