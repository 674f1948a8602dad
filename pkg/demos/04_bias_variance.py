"""
Bias and variance across training budgets
=========================================

Split the training set in two, train one model per half for each training
eps, and decompose the squared error of the softmax outputs on clean and on
PGD-attacked test points.
"""
from advlab import analysis
from advlab.data import make_synthetic
from advlab.losses import CEL
from advlab.optim import OneCycle
from advlab.train import TrainConfig

train_set = make_synthetic(3, 100, (8, 8), 3, 0.2, seed=0, sample_seed=1, template_scale=0.2)
test_set = make_synthetic(3, 100, (8, 8), 3, 0.2, seed=0, sample_seed=2, template_scale=0.2)
config = TrainConfig(loss=CEL(), schedule=OneCycle(0.1, 10), epochs=10, batch_size=16, eval_attacks=())

report = analysis.bias_variance(train_set, test_set, config, eps_list=[e / 255 for e in (1, 4, 8, 12)])
print(report.to_csv())
for row in report.rows:
    for side in (row.natural, row.adversarial):
        assert abs(side.risk - side.bias - side.variance) < 1e-6
