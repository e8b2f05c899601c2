"""
URL configuration for the dnlab project.

Only the admin is routed; experiments run through `manage.py experiment`.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
