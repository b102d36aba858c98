def classify(value):
    if value < 0:
        return -1
    elif value == 0:
        return 0
    elif value < 10:
        return 1
    else:
        return 2
