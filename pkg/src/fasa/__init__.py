"""SYN-flood detection with an ANFIS classifier and SDN flow-rule mitigation.

Modules:

- ``anfis``: Takagi-Sugeno ANFIS with hybrid training and a JSON model format
- ``preprocess``: flow-feature CSV cleaning, feature selection and scaling
- ``simnet``: discrete-event SDN fabric with OpenFlow-style flow tables
- ``traffic``: benign and SYN-flood workloads and the scenario runner
- ``detect``: the windowed controller (classify, block, allow)
- ``metrics``: confusion matrix, scores and ROC/AUC
- ``cli``: the ``fasa`` command
- ``synthetic``: small generated datasets for tests and demos
"""

__version__ = "0.1.0"
