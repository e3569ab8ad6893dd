class Node:
    def __init__(self, token, line_number, parent):
        self.token = token
        self.line_number = line_number
        self.parent = parent

    def name(self):
        return self.token


class Variable:
    def __init__(self, token, points_to, line_number=None):
        self.token = token
        self.points_to = points_to
        self.line_number = line_number

    def point_to_node(self):
        return isinstance(self.points_to, Node)


class Call:
    def __init__(self, token, line_number=None, owner_token=None):
        self.token = token
        self.owner_token = owner_token
        self.line_number = line_number

    def is_attr(self):
        return self.owner_token is not None

    def matches_variable(self, variable):
        if variable.point_to_node():
            if variable.token == self.owner_token:
                return variable.points_to
            if variable.token == self.token:
                return variable.points_to
        return None
