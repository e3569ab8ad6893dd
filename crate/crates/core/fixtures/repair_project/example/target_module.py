def scale(values, factor):
    return [v * factor for v in values]


def clamp(value, low, high):
    if value < low:
        return low
    if value > high:
        return high
    return value
