from stats import running_max

assert running_max([]) == []
assert running_max([7]) == [7]
assert running_max([3, 1, 4, 1, 5]) == [3, 3, 4, 4, 5]
assert running_max([-2, -5, -1]) == [-2, -2, -1]
assert running_max([2, 2, 1, 2]) == [2, 2, 2, 2]
