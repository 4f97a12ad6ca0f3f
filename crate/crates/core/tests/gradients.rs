mod common;

use common::{gradient_check, random_batch, random_network};
use contestable::graphs::MaskMatrix;
use contestable::jointnet::Task;
use contestable::losses::LossWeights;
use contestable::netcore::SeededRng;

#[test]
fn regression_gradients_match_finite_differences() {
    let net = random_network(3, vec![5, 4], Task::Regression, 1);
    let mut rng = SeededRng::new(2);
    let batch = random_batch(6, 4, Task::Regression, &mut rng);
    let w = LossWeights {
        eta: 0.8,
        beta: 1.5,
        lambda1: 0.3,
    };
    let check = gradient_check(&net, &batch, &w);
    assert!(check.worst <= 1e-4, "{} ({})", check.worst, check.worst_at);
}

#[test]
fn classification_gradients_with_mask() {
    let mut net = random_network(4, vec![6, 3, 5], Task::Classification, 3);
    let mut mask = MaskMatrix::unconstrained(5);
    mask.forbid(1, 0);
    mask.forbid(3, 2);
    net.apply_mask(mask).unwrap();
    let mut rng = SeededRng::new(4);
    let batch = random_batch(7, 5, Task::Classification, &mut rng);
    let check = gradient_check(&net, &batch, &LossWeights::default());
    assert!(check.worst <= 1e-4, "{} ({})", check.worst, check.worst_at);
}

#[test]
fn single_hidden_layer_gradients() {
    let net = random_network(2, vec![4], Task::Regression, 5);
    let mut rng = SeededRng::new(6);
    let batch = random_batch(5, 3, Task::Regression, &mut rng);
    let check = gradient_check(&net, &batch, &LossWeights::default());
    assert!(check.worst <= 1e-4, "{} ({})", check.worst, check.worst_at);
}
