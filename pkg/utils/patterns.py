'''
Description  : Regular expression
'''

# 数据集标识
DATASET_ID_PATTERN = r"^(mnist|usps|svhn|cifar10|stl10)$"

# 基础模型数量：正整数或 classes
NUM_MODELS_PATTERN = r"^([1-9][0-9]*|classes)$"

# 结果表的基础模型行名
BASE_ROW_PATTERN = r"^model (\d+)$"
