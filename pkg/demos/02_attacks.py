"""
Attacking a PGD-trained model
=============================

Train a small MLP on the synthetic task, then compare natural accuracy with
FGSM, PGD-10, CW-10 and the restarted strong evaluation at 8/255.
"""
from advlab import analysis, attacks
from advlab.data import make_synthetic
from advlab.losses import CEL
from advlab.optim import OneCycle
from advlab.train import TrainConfig, train

train_set = make_synthetic(3, 100, (8, 8), 3, 0.2, seed=0, sample_seed=1, template_scale=0.3)
test_set = make_synthetic(3, 100, (8, 8), 3, 0.2, seed=0, sample_seed=2, template_scale=0.3)

config = TrainConfig(loss=CEL(), schedule=OneCycle(0.1, 15), epochs=15, batch_size=16, eval_attacks=())
model = train(config, train_set, test_set).model

report = analysis.evaluate(model, test_set)
print(f"natural  {report.natural_acc:.3f}")
for name, acc in report.adv_acc.items():
    print(f"{name:<8} {acc:.3f}")

# a single PGD run on a few samples: the perturbation stays in the box
adv = attacks.pgd(model, test_set.images[:5], test_set.labels[:5], attacks.pgd_config())
print("max |delta| * 255 =", round(float(abs(adv.delta).max() * 255), 4))
print("flipped:", adv.success_mask)

# an untrained model for contrast
fresh = TrainConfig(paradigm="natural", epochs=0)
print("untrained natural acc:", analysis.evaluate(train(fresh, train_set, test_set).model, test_set, {}).natural_acc)
