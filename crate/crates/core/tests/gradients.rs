mod support;

use rtcnet::net::{Ablation, Architecture, BlockShape, Network};
use rtcnet::preprocess::CropConfig;
use rtcnet::tensor::softmax_cross_entropy;

fn block() -> BlockShape {
    CropConfig::default().block_shape()
}

#[test]
fn full_network_gradients() {
    let arch = Architecture::new(4, Ablation::None, block()).unwrap();
    let g = support::network_gradient_sweep(arch, 11, 5, 60);
    assert!(g.checked > 500, "{g:?}");
    assert!(g.max_rel_err < 1e-4, "{g:?}");
}

#[test]
fn ablation_gradients() {
    for (ab, n_out) in [(Ablation::NoLowLevel, 2), (Ablation::NoRcs, 2), (Ablation::NoSpeed, 4)] {
        let arch = Architecture::new(n_out, ab, block()).unwrap();
        let g = support::network_gradient_sweep(arch, 5, 2, 25);
        assert!(g.max_rel_err < 1e-4, "{ab:?}: {g:?}");
    }
}

// Cross-entropy gradient through the whole network, by finite differences
// on the inputs of the loss rather than on parameters.
#[test]
fn cross_entropy_chain() {
    let arch = Architecture::new(4, Ablation::None, block()).unwrap();
    let net: Network<f64> = support::random_network(arch, 2);
    let mut r = support::rng(9);
    let block = support::uniform_vec(&mut r, arch.block.len(), -1.0, 1.0);
    let features = support::uniform_vec(&mut r, 4, -1.0, 1.0);
    let trace = net.forward(&block, &features).unwrap();
    let (_, grad) = softmax_cross_entropy(trace.logits(), 2);
    let g = support::check_network_gradients(&net, &block, &features, &grad, 1e-3, 20, &mut r);
    assert!(g.checked > 100 && g.max_rel_err < 1e-4, "{g:?}");
}
