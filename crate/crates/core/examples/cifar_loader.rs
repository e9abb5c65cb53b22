// Reads CIFAR-10 binary batches. Set MIXBT_CIFAR_DIR to a real
// `cifar-10-batches-bin` directory; otherwise a synthetic set is written in
// the same layout and read back.

use std::path::PathBuf;

use mixbt::data::{load_cifar10, write_cifar10, Dataset, DatasetMeta, ImageShape, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES};
use mixbt::Tensor;

fn fake_split(n: usize, offset: usize) -> mixbt::Result<Dataset> {
    let shape = ImageShape::cifar();
    let pixels = shape.pixels();
    let data = (0..n * pixels).map(|i| ((i * 37 + offset) % 256) as f64 / 255.0).collect();
    Dataset::new(
        Tensor::new(vec![n, pixels], data)?,
        (0..n).map(|i| (i + offset) % 10).collect(),
        DatasetMeta {
            shape,
            class_count: 10,
            name: "fake".into(),
        },
    )
}

fn main() -> mixbt::Result<()> {
    let dir = match std::env::var_os("MIXBT_CIFAR_DIR") {
        Some(d) => PathBuf::from(d),
        None => {
            let dir = std::env::temp_dir().join(format!("mixbt-cifar-example-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|e| mixbt::Error::io(&dir, e))?;
            write_cifar10(&dir.join(CIFAR_TRAIN_FILES[0]), &fake_split(40, 0)?)?;
            write_cifar10(&dir.join(CIFAR_TEST_FILE), &fake_split(20, 3)?)?;
            dir
        }
    };
    let (train, test) = load_cifar10(&dir, Some(2))?;
    println!("{}: train {} x {}, test {} x {}", dir.display(), train.len(), train.dim(), test.len(), test.dim());
    let mut counts = [0usize; 10];
    train.labels.iter().for_each(|&l| counts[l] += 1);
    println!("train images per class: {counts:?}");
    println!("first pixel values: {:?}", &train.images.row(0)[..4]);
    if std::env::var_os("MIXBT_CIFAR_DIR").is_none() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    Ok(())
}
