// Linear warmup followed by cosine decay, and a few Adam steps on a quadratic.

use mixbt::trainloop::{adam_step, OptimState, Schedule};
use mixbt::Tensor;

fn main() -> mixbt::Result<()> {
    let s = Schedule::new(0.01, 10, 100)?;
    for e in [0.0, 5.0, 10.0, 32.5, 55.0, 77.5, 100.0] {
        println!("epoch {e:6.1}  lr {:.6}", s.lr_at(e)?);
    }

    let mut x = Tensor::vector(vec![3.0, -2.0]);
    let mut state = OptimState::new([&x]);
    for _ in 0..200 {
        let g = x.scale(2.0);
        adam_step(&mut [&mut x], &[g], &mut state, 0.05, 0.0)?;
    }
    println!("argmin of |x|^2 after 200 Adam steps: {:?}", x.data());
    assert!(x.data().iter().all(|v| v.abs() < 0.1));
    Ok(())
}
